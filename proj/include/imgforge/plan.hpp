#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "imgforge/parser.hpp"
#include "imgforge/source.hpp"

namespace imgforge {

enum class Stage { Setup, Prepare, Chroot };

std::string_view stage_name(Stage stage);

using StagedCommands = std::map<Stage, std::vector<Command>>;

struct TargetSpec {
  std::filesystem::path path;
  bool is_device = false;

  bool operator==(const TargetSpec&) const = default;
};

struct PlanDefaults {
  /// Classifies FROM/TO/INPLACE locators; defaults to the live filesystem.
  FsProbe probe = probe_path;
  /// Scratch directory for the chroot mount point. Defaults to
  /// `<pifile dir>/.imgforge/<pifile stem>`.
  std::optional<std::filesystem::path> work_dir;
};

struct ExecutionPlan {
  SourceSpec source;
  TargetSpec destination;
  bool inplace = false;
  std::uint64_t pump_bytes = 0;
  int partition_index = 2;
  std::vector<std::string> path_extensions;
  StagedCommands staged;

  std::filesystem::path pifile_path;
  std::filesystem::path work_dir;
  std::vector<std::string> warnings;

  std::filesystem::path pifile_dir() const { return pifile_path.parent_path(); }
  std::filesystem::path chroot_root() const { return work_dir / "root"; }
  const std::vector<Command>& commands(Stage stage) const;

  bool operator==(const ExecutionPlan&) const = default;
};

/// Every command lands in exactly one stage; textual order is kept per stage.
StagedCommands assign_stages(const Pifile& pifile);

ExecutionPlan build_plan(const Pifile& pifile, const PlanDefaults& defaults = {});

/// Non-fatal findings about a built plan.
std::vector<std::string> validate_plan(const ExecutionPlan& plan, const FsProbe& probe = probe_path);

}  // namespace imgforge
