#pragma once

// Runs an ExecutionPlan stage by stage: setup, prepare, then the chroot
// commands between mount setup and teardown.

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "imgforge/errors.hpp"
#include "imgforge/executor.hpp"
#include "imgforge/plan.hpp"
#include "imgforge/source.hpp"

namespace imgforge {

struct PipelineEvent {
  enum class Type { StageBegin, Command, Output, Warning, Failure, Info };

  Type type = Type::Info;
  Stage stage = Stage::Setup;
  std::optional<SourceLine> origin;
  std::string message;
  std::optional<int> status;
};

using EventSink = std::function<void(const PipelineEvent&)>;

struct ExecuteOptions {
  /// Static emulator binaries copied into the guest.
  std::vector<std::filesystem::path> emulators;
  SourceOptions source;
  /// Host PATH, the tail of the guest PATH.
  std::string host_path = "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin";
  /// Extra variables exported to guest commands.
  std::map<std::string, std::string> guest_env;
  EventSink on_event;
};

struct BuildReport {
  std::map<Stage, std::chrono::nanoseconds> durations;
  std::size_t action_count = 0;
  std::size_t guest_actions = 0;
  std::filesystem::path image;
  std::optional<std::string> image_digest;
};

/// Teardown of everything set up is guaranteed; the first failure is
/// rethrown afterwards with its Pifile origin attached.
BuildReport execute(const ExecutionPlan& plan, Executor& executor,
                    const ExecuteOptions& options = {});

}  // namespace imgforge
