#include "imgforge/mounts.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <map>
#include <regex>
#include <set>

#include "imgforge/errors.hpp"
#include "imgforge/plan.hpp"

namespace imgforge {

namespace fs = std::filesystem;

namespace {

const std::set<std::string, std::less<>> kPseudoDevices = {
    "proc", "sysfs", "tmpfs", "devpts", "swap", "none", "devtmpfs", "cgroup", "cgroup2",
};

constexpr std::string_view kChrootBinds[] = {"/dev", "/sys", "/proc", "/dev/pts"};

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (pos < line.size()) {
    auto start = line.find_first_not_of(" \t", pos);
    if (start == std::string_view::npos) break;
    auto end = line.find_first_of(" \t", start);
    if (end == std::string_view::npos) end = line.size();
    fields.push_back(line.substr(start, end - start));
    pos = end;
  }
  return fields;
}

std::optional<int> to_int(std::string_view text, int base = 10) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value, base);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

std::string lowercase(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

void warn(std::vector<std::string>* warnings, std::string message) {
  if (warnings) warnings->push_back(std::move(message));
}

std::optional<int> occupied_slot(int slot, const PartitionTable& table, std::string_view spec,
                                 std::vector<std::string>* warnings) {
  if (slot < 1 || slot > 4 || table.entry(slot).empty()) {
    warn(warnings, "fstab device " + std::string(spec) + " names partition " +
                       std::to_string(slot) + ", which is not in the image");
    return std::nullopt;
  }
  return slot;
}

std::size_t path_depth(const fs::path& p) {
  return static_cast<std::size_t>(std::distance(p.begin(), p.end()));
}

std::string under_root(const fs::path& root, const fs::path& guest) {
  return (root / guest.relative_path()).lexically_normal().string();
}

bool escapes_root(const fs::path& guest) {
  auto normal = guest.lexically_normal();
  for (const auto& part : normal) {
    if (part == "..") return true;
  }
  return false;
}

}  // namespace

FstabParse parse_fstab(std::string_view text) {
  FstabParse result;
  int line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    auto fields = split_fields(line);
    if (fields.empty() || fields.front().front() == '#') continue;
    auto dump = fields.size() == 6 ? to_int(fields[4]) : std::nullopt;
    auto pass = fields.size() == 6 ? to_int(fields[5]) : std::nullopt;
    if (!dump || !pass) {
      result.warnings.push_back("fstab line " + std::to_string(line_no) +
                                ": expected 6 fields, skipped");
      continue;
    }
    result.entries.push_back(FstabEntry{std::string(fields[0]), std::string(fields[1]),
                                        std::string(fields[2]), std::string(fields[3]), *dump,
                                        *pass});
  }
  return result;
}

std::optional<int> map_fstab_device(std::string_view spec, const PartitionTable& table,
                                    std::vector<std::string>* warnings) {
  if (kPseudoDevices.contains(spec)) return std::nullopt;

  auto lower = lowercase(spec);
  if (lower.starts_with("partuuid=")) {
    static const std::regex partuuid(R"(^partuuid=([0-9a-f]{8})-([0-9a-f]{2})$)");
    std::smatch m;
    if (!std::regex_match(lower, m, partuuid)) {
      warn(warnings, "unrecognized PARTUUID form " + std::string(spec));
      return std::nullopt;
    }
    char disk_id[9];
    std::snprintf(disk_id, sizeof disk_id, "%08x", table.disk_id);
    if (m[1].str() != disk_id) {
      warn(warnings, "fstab device " + std::string(spec) + " belongs to another disk (image id " +
                         disk_id + ")");
      return std::nullopt;
    }
    return occupied_slot(*to_int(m[2].str(), 16), table, spec, warnings);
  }
  if (lower.starts_with("label=") || lower.starts_with("uuid=") ||
      lower.starts_with("partlabel=")) {
    warn(warnings, "fstab device " + std::string(spec) +
                       " needs filesystem metadata to resolve; skipped");
    return std::nullopt;
  }

  static const std::regex device(R"(^/dev/(mmcblk\d+p|nvme\d+n\d+p|[shv]d[a-z]+)(\d+)$)");
  std::string owned(spec);
  std::smatch m;
  if (std::regex_match(owned, m, device)) {
    return occupied_slot(*to_int(m[2].str()), table, spec, warnings);
  }
  warn(warnings, "fstab device " + std::string(spec) + " cannot be mapped to an image partition");
  return std::nullopt;
}

MountPlan build_mount_plan(const ExecutionPlan& plan, const PartitionTable& table,
                           const std::optional<std::string>& guest_fstab,
                           const std::vector<fs::path>& emulators) {
  const int root_slot = plan.partition_index;
  if (root_slot < 1 || root_slot > 4 || table.entry(root_slot).empty() ||
      table.entry(root_slot).is_extended()) {
    throw Error(ErrorCode::RootPartitionUnmountable,
                "partition " + std::to_string(root_slot) + " cannot be mounted as the root");
  }

  MountPlan result;
  const auto root = plan.chroot_root();
  auto partition_mount = [&](int slot, const fs::path& target) {
    const auto& e = table.entry(slot);
    MountAction m{MountKind::MountPartition, std::string(kLoopHandle) + ":p" + std::to_string(slot),
                  target.string()};
    m.partition = slot;
    m.offset = std::uint64_t{e.lba_start} * kSectorSize;
    m.size = std::uint64_t{e.lba_size} * kSectorSize;
    m.create_target = true;
    return m;
  };

  auto& setup = result.setup;
  setup.push_back({MountKind::LoopAttach, plan.destination.path.string(), std::string(kLoopHandle)});
  setup.push_back(partition_mount(root_slot, root));
  for (auto dir : kChrootBinds) {
    MountAction bind{MountKind::BindMount, std::string(dir),
                     under_root(root, dir)};
    bind.create_target = true;
    setup.push_back(bind);
  }
  setup.push_back({MountKind::BindMount, std::string(kHostResolvConf),
                   under_root(root, kHostResolvConf)});
  for (const auto& emulator : emulators) {
    setup.push_back({MountKind::CopyEmulator, emulator.string(),
                     (root / "usr/bin" / emulator.filename()).string()});
  }

  if (guest_fstab) {
    auto parsed = parse_fstab(*guest_fstab);
    result.warnings = std::move(parsed.warnings);
    std::set<fs::path> mounted = {"/"};
    for (auto dir : kChrootBinds) mounted.insert(fs::path(dir));

    std::vector<MountAction> extra;
    std::vector<std::size_t> depths;
    for (const auto& entry : parsed.entries) {
      if (entry.fs_type == "swap" || !entry.mount_point.starts_with('/')) continue;
      auto slot = map_fstab_device(entry.device_spec, table, &result.warnings);
      auto mount_point = fs::path(entry.mount_point).lexically_normal();
      if (!mount_point.has_filename() && mount_point != "/") mount_point = mount_point.parent_path();
      if (mount_point == "/") {
        if (slot && *slot != root_slot) {
          result.warnings.push_back("fstab root is partition " + std::to_string(*slot) +
                                    " but partition " + std::to_string(root_slot) +
                                    " is mounted as the root (FstabRootMismatch)");
        }
        continue;
      }
      if (!slot) continue;
      if (escapes_root(entry.mount_point)) {
        result.warnings.push_back("fstab mount point " + entry.mount_point +
                                  " leaves the guest root; skipped");
        continue;
      }
      if (*slot == root_slot) {
        result.warnings.push_back("fstab mounts the root partition again at " +
                                  entry.mount_point + "; skipped");
        continue;
      }
      if (!mounted.insert(mount_point).second) continue;
      extra.push_back(partition_mount(*slot, under_root(root, mount_point.string())));
      depths.push_back(path_depth(mount_point));
    }
    std::vector<std::size_t> order(extra.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return depths[a] < depths[b]; });
    for (auto i : order) setup.push_back(extra[i]);
  }

  for (std::size_t i = 0; i < setup.size(); ++i) setup[i].ordinal = static_cast<int>(i);
  result.teardown = teardown_for(setup);
  for (std::size_t i = 0; i < result.teardown.size(); ++i) {
    result.teardown[i].ordinal = static_cast<int>(setup.size() + i);
  }
  return result;
}

MountAction teardown_of(const MountAction& setup) {
  MountAction down = setup;
  down.create_target = false;
  switch (setup.kind) {
    case MountKind::LoopAttach: down.kind = MountKind::LoopDetach; break;
    case MountKind::MountPartition:
    case MountKind::BindMount: down.kind = MountKind::Unmount; break;
    case MountKind::CopyEmulator: down.kind = MountKind::RemoveEmulator; break;
    default:
      throw std::invalid_argument("not a setup mount action");
  }
  return down;
}

std::vector<MountAction> teardown_for(std::span<const MountAction> setup) {
  std::vector<MountAction> down;
  down.reserve(setup.size());
  for (auto it = setup.rbegin(); it != setup.rend(); ++it) down.push_back(teardown_of(*it));
  return down;
}

Action to_action(const MountAction& m) {
  switch (m.kind) {
    case MountKind::LoopAttach:
      return Action{ActionKind::LoopAttach, {{"image", m.source}, {"handle", m.target}}};
    case MountKind::LoopDetach:
      return Action{ActionKind::LoopDetach, {{"handle", m.target}, {"image", m.source}}};
    case MountKind::MountPartition:
      return Action{ActionKind::MountPartition,
                    {{"source", m.source},
                     {"target", m.target},
                     {"partition", std::to_string(m.partition)},
                     {"offset", std::to_string(m.offset)},
                     {"size", std::to_string(m.size)},
                     {"mkdir", m.create_target ? "1" : "0"}}};
    case MountKind::BindMount:
      return Action{ActionKind::BindMount, {{"source", m.source},
                                            {"target", m.target},
                                            {"mkdir", m.create_target ? "1" : "0"}}};
    case MountKind::CopyEmulator:
      return Action{ActionKind::CopyEmulator, {{"source", m.source}, {"target", m.target}}};
    case MountKind::RemoveEmulator:
      return Action{ActionKind::RemoveEmulator, {{"target", m.target}}};
    case MountKind::Unmount:
      return Action{ActionKind::Unmount, {{"target", m.target}}};
  }
  throw std::invalid_argument("unknown mount kind");
}

std::vector<fs::path> discover_emulators(std::string_view host_path) {
  static const std::regex pattern(R"(^qemu-.+-static$)");
  std::map<std::string, fs::path> found;
  std::size_t start = 0;
  while (start <= host_path.size()) {
    auto colon = host_path.find(':', start);
    if (colon == std::string_view::npos) colon = host_path.size();
    auto dir = fs::path(host_path.substr(start, colon - start));
    start = colon + 1;
    std::error_code ec;
    if (dir.empty() || !fs::is_directory(dir, ec)) continue;
    for (const auto& item : fs::directory_iterator(dir, ec)) {
      auto name = item.path().filename().string();
      if (std::regex_match(name, pattern) && item.is_regular_file(ec)) {
        found.try_emplace(name, item.path());
      }
    }
  }
  std::vector<fs::path> result;
  for (auto& [name, path] : found) result.push_back(path);
  return result;
}

}  // namespace imgforge
