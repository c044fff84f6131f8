#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "imgforge/executor.hpp"
#include "imgforge/pipeline.hpp"
#include "imgforge/source.hpp"

namespace imgforge {

struct CliConfig {
  std::filesystem::path pifile;
  std::optional<std::filesystem::path> dry_run;
  std::optional<std::filesystem::path> cache_dir;
  std::map<std::string, std::string> env_overrides;
  bool refresh = false;
  bool offline = false;
  /// -1 quiet, 0 normal, 1 verbose
  int verbosity = 0;
  bool inplace_device = false;
  std::optional<std::filesystem::path> guest_fstab;
  std::vector<std::filesystem::path> emulators;
};

struct CliHooks {
  /// Replaces the backend choice (DryRunExecutor for --dry-run, else
  /// RealExecutor). Tests use it to inject failing executors.
  std::function<std::unique_ptr<Executor>(const CliConfig&)> make_executor;
  Fetcher* fetcher = nullptr;
  std::ostream* out = nullptr;  // log, defaults to std::cout
  std::ostream* err = nullptr;  // errors, defaults to std::cerr
};

/// `[stage] file:NN message`; command output is indented beneath.
std::string render_log(const PipelineEvent& event);

/// argv excludes the program name. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, const std::map<std::string, std::string>& env,
            const CliHooks& hooks = {});

}  // namespace imgforge
