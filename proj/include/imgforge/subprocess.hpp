#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace imgforge {

struct ProcessSpec {
  std::vector<std::string> argv;
  std::filesystem::path cwd;
  /// Full environment as NAME=VALUE; inherits the caller's when unset.
  std::optional<std::vector<std::string>> env;
  /// Written to the child's standard input, which is closed afterwards.
  std::optional<std::string> input;
};

/// Runs a child with stdout and stderr merged, delivering output line by
/// line. Returns the exit status, or 128+signal. A program that cannot be
/// executed yields 127.
int run_process(const ProcessSpec& spec,
                const std::function<void(std::string_view)>& on_line = {});

/// Looks `name` up on `path_env` and then in the sbin directories.
std::optional<std::filesystem::path> find_program(std::string_view name,
                                                  std::string_view path_env);

}  // namespace imgforge
