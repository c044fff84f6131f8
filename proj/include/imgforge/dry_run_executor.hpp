#pragma once

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "imgforge/executor.hpp"

namespace imgforge {

/// Records every action without performing it. Copies, growth and table
/// writes are tracked in a virtual overlay so later reads observe them
/// while the files on disk stay untouched.
class DryRunExecutor final : public Executor {
 public:
  /// Returns a status for actions that should fail, nullopt otherwise.
  using FailureRule = std::function<std::optional<int>(const Action&)>;

  /// Content served by read_guest_file for `guest_path` under any root.
  void set_guest_file(const std::filesystem::path& guest_path, std::string content);
  void fail_when(FailureRule rule) { rules_.push_back(std::move(rule)); }

  bool dry_run() const override { return true; }
  PartitionTable read_partition_table(const std::filesystem::path& image) override;
  std::uint64_t image_size(const std::filesystem::path& image) override;
  std::optional<std::string> read_guest_file(const std::filesystem::path& root,
                                             const std::filesystem::path& guest_path) override;
  bool host_path_available(const std::filesystem::path& path) override;
  std::optional<std::string> image_digest(const std::filesystem::path&) override {
    return std::nullopt;
  }

 protected:
  int perform(const Action& action) override;

 private:
  struct VirtualImage {
    std::filesystem::path backing;
    std::uint64_t size = 0;
    std::optional<PartitionTable> table;
  };

  VirtualImage view(const std::filesystem::path& image);

  std::map<std::filesystem::path, VirtualImage> images_;
  std::map<std::filesystem::path, std::string> guest_files_;
  std::vector<FailureRule> rules_;
  bool host_commands_seen_ = false;
};

}  // namespace imgforge
