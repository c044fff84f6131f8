#pragma once

#include <map>
#include <string>

#include "imgforge/executor.hpp"

namespace imgforge {

struct RealExecutorOptions {
  /// Searched for losetup, mount, chroot and friends (sbin dirs are added).
  std::string host_path = "/usr/local/bin:/usr/bin:/bin";
  /// Environment passed to HOST commands; inherits ours when empty.
  std::vector<std::string> host_env;
};

/// Performs actions on the host with losetup, mount, umount, e2fsck,
/// resize2fs and chroot. Mounting and chroot need root.
class RealExecutor final : public Executor {
 public:
  explicit RealExecutor(RealExecutorOptions options = {});
  ~RealExecutor() override;

  bool dry_run() const override { return false; }
  PartitionTable read_partition_table(const std::filesystem::path& image) override;
  std::uint64_t image_size(const std::filesystem::path& image) override;
  std::optional<std::string> read_guest_file(const std::filesystem::path& root,
                                             const std::filesystem::path& guest_path) override;
  bool host_path_available(const std::filesystem::path& path) override;
  std::optional<std::string> image_digest(const std::filesystem::path& image) override;

 protected:
  int perform(const Action& action) override;

 private:
  struct Loop {
    std::string device;
    std::filesystem::path image;
  };

  std::filesystem::path tool(std::string_view name) const;
  int exec(std::vector<std::string> argv, std::optional<std::string> input = std::nullopt,
           const std::filesystem::path& cwd = {},
           std::optional<std::vector<std::string>> env = std::nullopt,
           std::string* captured = nullptr);
  void require_root(std::string_view what) const;

  int copy_file(const Action& action, bool device);
  int fs_resize(const Action& action);
  int loop_attach(const Action& action);
  int mount_partition(const Action& action);
  int bind_mount(const Action& action);
  int copy_emulator(const Action& action);
  int unmount(const Action& action);
  int loop_detach(const Action& action);
  int host_exec(const Action& action);
  int guest_exec(const Action& action);
  int copy_in(const Action& action);

  RealExecutorOptions options_;
  std::map<std::string, Loop> loops_;
  // partition loops stacked on a whole-disk loop, keyed by mount target
  std::map<std::string, std::string> partition_loops_;
};

}  // namespace imgforge
