#pragma once

// Mount planning for the chroot stage. Plans are pure data; the executor
// carries them out and tears them down in exact reverse order.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "imgforge/action.hpp"
#include "imgforge/image.hpp"

namespace imgforge {

struct ExecutionPlan;

enum class MountKind {
  LoopAttach,
  MountPartition,
  BindMount,
  CopyEmulator,
  RemoveEmulator,
  Unmount,
  LoopDetach,
};

struct MountAction {
  MountKind kind{};
  std::string source;
  std::string target;
  int ordinal = 0;
  /// MountPartition only: slot number and its byte range in the image.
  int partition = 0;
  std::uint64_t offset = 0;
  std::uint64_t size = 0;
  /// Create the target directory (mkdir -p) before mounting.
  bool create_target = false;

  bool operator==(const MountAction&) const = default;
};

struct FstabEntry {
  std::string device_spec;
  std::string mount_point;
  std::string fs_type;
  std::string options;
  int dump = 0;
  int pass = 0;

  bool operator==(const FstabEntry&) const = default;
};

struct FstabParse {
  std::vector<FstabEntry> entries;
  std::vector<std::string> warnings;
};

/// Never fails: malformed lines are skipped with a warning each.
FstabParse parse_fstab(std::string_view text);

/// Maps an fstab device spec onto a partition slot of `table`.
/// Understands PARTUUID=<diskid>-<nn>, /dev/mmcblk0pN and /dev/sdXN.
std::optional<int> map_fstab_device(std::string_view spec, const PartitionTable& table,
                                    std::vector<std::string>* warnings = nullptr);

struct MountPlan {
  std::vector<MountAction> setup;
  std::vector<MountAction> teardown;
  std::vector<std::string> warnings;
};

inline constexpr std::string_view kHostResolvConf = "/etc/resolv.conf";

MountPlan build_mount_plan(const ExecutionPlan& plan, const PartitionTable& table,
                           const std::optional<std::string>& guest_fstab,
                           const std::vector<std::filesystem::path>& emulators);

/// Counterpart of one setup action (Mount/Bind -> Unmount, LoopAttach ->
/// LoopDetach, CopyEmulator -> RemoveEmulator).
MountAction teardown_of(const MountAction& setup);

/// Exact reverse of `setup`, each action replaced by its counterpart.
std::vector<MountAction> teardown_for(std::span<const MountAction> setup);

Action to_action(const MountAction& mount);

/// Every `qemu-*-static` found on `host_path`, sorted by file name.
std::vector<std::filesystem::path> discover_emulators(std::string_view host_path);

}  // namespace imgforge
