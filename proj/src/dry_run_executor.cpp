#include "imgforge/dry_run_executor.hpp"

#include "imgforge/errors.hpp"

namespace imgforge {

namespace fs = std::filesystem;

void DryRunExecutor::set_guest_file(const fs::path& guest_path, std::string content) {
  guest_files_[guest_path.lexically_normal()] = std::move(content);
}

DryRunExecutor::VirtualImage DryRunExecutor::view(const fs::path& image) {
  if (auto it = images_.find(image); it != images_.end()) return it->second;
  std::error_code ec;
  auto size = fs::file_size(image, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot read image " + image.string());
  return VirtualImage{image, size, std::nullopt};
}

PartitionTable DryRunExecutor::read_partition_table(const fs::path& image) {
  auto v = view(image);
  return v.table ? *v.table : imgforge::read_partition_table(v.backing);
}

std::uint64_t DryRunExecutor::image_size(const fs::path& image) { return view(image).size; }

std::optional<std::string> DryRunExecutor::read_guest_file(const fs::path&,
                                                           const fs::path& guest_path) {
  if (auto it = guest_files_.find(guest_path.lexically_normal()); it != guest_files_.end()) {
    return it->second;
  }
  return std::nullopt;
}

bool DryRunExecutor::host_path_available(const fs::path& path) {
  std::error_code ec;
  // A HOST step that has not really run may be the producer.
  return fs::exists(path, ec) || host_commands_seen_;
}

int DryRunExecutor::perform(const Action& action) {
  switch (action.kind) {
    case ActionKind::Copy:
      images_[fs::path(action.at("dst"))] = view(fs::path(action.at("src")));
      break;
    case ActionKind::DeviceWrite:
      images_[fs::path(action.at("device"))] = view(fs::path(action.at("src")));
      break;
    case ActionKind::Grow: {
      fs::path image(action.at("image"));
      auto v = view(image);
      v.size += std::stoull(action.at("bytes"));
      images_[image] = v;
      break;
    }
    case ActionKind::TableWrite: {
      fs::path image(action.at("image"));
      auto v = view(image);
      auto table = v.table ? *v.table : imgforge::read_partition_table(v.backing);
      auto& e = table.entry(std::stoi(action.at("partition")));
      e.lba_start = static_cast<std::uint32_t>(std::stoul(action.at("lba_start")));
      e.lba_size = static_cast<std::uint32_t>(std::stoul(action.at("lba_size")));
      v.table = table;
      images_[image] = v;
      break;
    }
    case ActionKind::HostExec:
      host_commands_seen_ = true;
      break;
    default:
      break;
  }
  for (const auto& rule : rules_) {
    if (auto status = rule(action)) return *status;
  }
  return 0;
}

}  // namespace imgforge
