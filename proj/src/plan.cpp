#include "imgforge/plan.hpp"

#include <charconv>

#include "imgforge/image.hpp"

namespace imgforge {

namespace fs = std::filesystem;

namespace {

const std::vector<Command> kNoCommands;

Stage stage_of(CommandKind kind) {
  switch (kind) {
    case CommandKind::From:
    case CommandKind::To:
    case CommandKind::Inplace:
      return Stage::Setup;
    case CommandKind::Pump:
      return Stage::Prepare;
    default:
      return Stage::Chroot;
  }
}

std::string where(const SourceLine& origin) {
  return origin.file.filename().string() + ":" + std::to_string(origin.line_no);
}

fs::path resolve_local(const std::string& locator, const fs::path& base) {
  fs::path p(locator);
  return p.is_relative() ? (base / p).lexically_normal() : p;
}

int parse_partition_index(const Command& from) {
  if (from.args.size() < 2) return 2;
  const auto& text = from.args[1];
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || value < 1) {
    throw Error(ErrorCode::InvalidPartitionIndex, "invalid partition index '" + text + "'",
                from.origin);
  }
  return value;
}

}  // namespace

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::Setup: return "setup";
    case Stage::Prepare: return "prepare";
    case Stage::Chroot: return "chroot";
  }
  return "?";
}

const std::vector<Command>& ExecutionPlan::commands(Stage stage) const {
  auto it = staged.find(stage);
  return it == staged.end() ? kNoCommands : it->second;
}

StagedCommands assign_stages(const Pifile& pifile) {
  StagedCommands staged{{Stage::Setup, {}}, {Stage::Prepare, {}}, {Stage::Chroot, {}}};
  for (const auto& cmd : pifile.commands) staged[stage_of(cmd.kind)].push_back(cmd);
  return staged;
}

ExecutionPlan build_plan(const Pifile& pifile, const PlanDefaults& defaults) {
  ExecutionPlan plan;
  plan.pifile_path = pifile.source_path;
  plan.staged = assign_stages(pifile);
  const auto base = pifile.source_path.parent_path();
  plan.work_dir = defaults.work_dir.value_or(base / ".imgforge" / pifile.source_path.stem());

  const Command* from = nullptr;
  const Command* inplace = nullptr;
  const Command* to = nullptr;
  for (const auto& cmd : plan.commands(Stage::Setup)) {
    switch (cmd.kind) {
      case CommandKind::From:
        if (from) {
          throw Error(ErrorCode::ConflictingSource,
                      "FROM already given at " + where(from->origin), cmd.origin);
        }
        from = &cmd;
        break;
      case CommandKind::Inplace:
        if (inplace) {
          throw Error(ErrorCode::ConflictingSource,
                      "INPLACE already given at " + where(inplace->origin), cmd.origin);
        }
        inplace = &cmd;
        break;
      case CommandKind::To:
        if (to) {
          plan.warnings.push_back(where(cmd.origin) + ": TO overrides the earlier TO at " +
                                  where(to->origin));
        }
        to = &cmd;
        break;
      default:
        break;
    }
  }
  if (from && inplace) {
    throw Error(ErrorCode::ConflictingSource, "FROM and INPLACE cannot be combined",
                inplace->origin);
  }
  if (!from && !inplace) {
    throw Error(ErrorCode::MissingSource,
                "no FROM or INPLACE in " + pifile.source_path.filename().string());
  }
  if (inplace && to) {
    throw Error(ErrorCode::ConflictingSource, "TO cannot be combined with INPLACE", to->origin);
  }

  const Command& root_cmd = from ? *from : *inplace;
  plan.partition_index = from ? parse_partition_index(*from) : 2;

  const auto& locator = root_cmd.args.front();
  plan.source.partition_index = plan.partition_index;
  if (url_scheme(locator)) {
    plan.source.kind = SourceKind::Url;
    plan.source.locator = locator;
  } else {
    plan.source.locator = resolve_local(locator, base).string();
    try {
      plan.source.kind = classify_source(plan.source.locator, defaults.probe);
    } catch (Error& e) {
      e.with_origin(root_cmd.origin);
      throw;
    }
  }
  if (inplace && plan.source.kind == SourceKind::Url) {
    throw Error(ErrorCode::ConflictingSource, "INPLACE needs a local image or device",
                inplace->origin);
  }

  if (inplace) {
    plan.inplace = true;
    plan.destination = {plan.source.locator, plan.source.kind == SourceKind::BlockDevice};
  } else if (to) {
    auto path = resolve_local(to->args.front(), base);
    plan.destination = {path, defaults.probe(path) == PathStatus::BlockDevice};
  } else {
    auto stem = pifile.source_path.stem().string();
    plan.destination = {(base / (stem + ".img")).lexically_normal(), false};
  }
  if (!inplace && plan.source.kind != SourceKind::Url &&
      fs::path(plan.source.locator) == plan.destination.path) {
    plan.inplace = true;
  }

  for (const auto& cmd : plan.commands(Stage::Prepare)) {
    try {
      plan.pump_bytes += parse_size(cmd.args.front()).bytes;
    } catch (Error& e) {
      e.with_origin(cmd.origin);
      throw;
    }
  }
  for (const auto& cmd : plan.commands(Stage::Chroot)) {
    if (cmd.kind == CommandKind::Path) plan.path_extensions.push_back(cmd.args.front());
  }
  return plan;
}

std::vector<std::string> validate_plan(const ExecutionPlan& plan, const FsProbe& probe) {
  std::vector<std::string> warnings;
  const auto& chroot = plan.commands(Stage::Chroot);
  if (chroot.empty()) warnings.emplace_back("no guest modifications");
  if (plan.pump_bytes > 0 && plan.inplace && plan.destination.is_device) {
    warnings.emplace_back("PUMP on in-place block device " + plan.destination.path.string() +
                          ": the device cannot grow");
  }

  for (std::size_t i = 0; i < chroot.size(); ++i) {
    const auto& cmd = chroot[i];
    if (cmd.kind != CommandKind::Install) continue;
    const auto& written = cmd.args[cmd.args.size() - 2];
    auto resolved = resolve_local(written, plan.pifile_dir());
    if (probe(resolved) != PathStatus::Missing) continue;

    auto dir = fs::path(written).parent_path().string();
    auto name = fs::path(written).filename().string();
    const Command* producer = nullptr;
    for (std::size_t j = 0; j < i && !producer; ++j) {
      if (chroot[j].kind != CommandKind::Host || chroot[j].args.empty()) continue;
      const auto& text = chroot[j].args.front();
      bool names_dir = !dir.empty() && text.find(dir) != std::string::npos;
      bool names_file = !name.empty() && text.find(name) != std::string::npos;
      if (names_dir || names_file) producer = &chroot[j];
    }
    if (producer) {
      warnings.push_back(where(cmd.origin) + ": INSTALL source '" + written +
                         "' does not exist yet (deferred existence, expected from HOST at " +
                         where(producer->origin) + ")");
    } else {
      warnings.push_back(where(cmd.origin) + ": INSTALL source '" + written +
                         "' does not exist");
    }
  }
  return warnings;
}

}  // namespace imgforge
