#include "imgforge/executor.hpp"

#include <algorithm>

#include "imgforge/errors.hpp"

namespace imgforge {

namespace fs = std::filesystem;

int Executor::run(Action action) {
  action.ordinal = next_ordinal_++;
  log_.push_back(format_action(action));
  actions_.push_back(action);
  int status = 0;
  try {
    status = perform(actions_.back());
  } catch (const Error& e) {
    log_.push_back(format_failure(next_ordinal_++, action.ordinal, e.status().value_or(-1)));
    throw;
  }
  if (status != 0) log_.push_back(format_failure(next_ordinal_++, action.ordinal, status));
  return status;
}

void Executor::require(Action action) {
  auto kind = action.kind;
  if (int status = run(std::move(action)); status != 0) {
    throw Error(ErrorCode::CommandFailed, std::string(action_kind_name(kind)) +
                                              " failed with exit status " +
                                              std::to_string(status))
        .with_status(status);
  }
}

std::string Executor::log_text() const {
  std::string text;
  for (const auto& line : log_) {
    text += line;
    text.push_back('\n');
  }
  return text;
}

std::string GuestEnv::path_string() const {
  std::string joined;
  for (const auto& dir : path_var) {
    if (!joined.empty()) joined.push_back(':');
    joined += dir;
  }
  return joined;
}

std::vector<std::string> compose_guest_path(const std::vector<std::string>& extensions,
                                            std::string_view host_path) {
  std::vector<std::string> path;
  auto add = [&](std::string_view dir) {
    if (dir.empty()) return;
    if (std::find(path.begin(), path.end(), dir) == path.end()) path.emplace_back(dir);
  };
  for (const auto& dir : extensions) add(dir);
  std::size_t start = 0;
  while (start <= host_path.size()) {
    auto colon = host_path.find(':', start);
    if (colon == std::string_view::npos) colon = host_path.size();
    add(host_path.substr(start, colon - start));
    start = colon + 1;
  }
  return path;
}

unsigned parse_mode(std::string_view text) {
  if (text.empty() || text.size() > 4 ||
      !std::all_of(text.begin(), text.end(), [](char c) { return c >= '0' && c <= '7'; })) {
    throw Error(ErrorCode::InvalidMode, "invalid octal mode '" + std::string(text) + "'");
  }
  unsigned mode = 0;
  for (char c : text) mode = mode * 8 + static_cast<unsigned>(c - '0');
  return mode;
}

fs::path guest_path_on_host(const fs::path& root, const fs::path& guest_path) {
  // normalize against "/" first so ".." cannot climb out of the root
  auto inside = (fs::path("/") / guest_path).lexically_normal();
  return (root / inside.relative_path()).lexically_normal();
}

int run_host(const std::string& command, const std::optional<std::string>& input,
             const fs::path& cwd, Executor& executor) {
  int status = executor.run(actions::host_exec(cwd, command, input));
  if (status != 0) {
    throw Error(ErrorCode::CommandFailed,
                "host command failed with exit status " + std::to_string(status))
        .with_status(status);
  }
  return status;
}

int run_guest(const std::string& command, const std::optional<std::string>& input,
              const GuestEnv& env, Executor& executor) {
  auto action = actions::guest_exec(env.root, env.path_string(), command, input);
  for (const auto& [key, value] : env.extra_env) action.set("env." + key, value);
  int status = executor.run(std::move(action));
  if (status != 0) {
    throw Error(ErrorCode::CommandFailed,
                "guest command failed with exit status " + std::to_string(status))
        .with_status(status);
  }
  return status;
}

void install_file(const fs::path& source, const fs::path& guest_destination,
                  const std::optional<std::string>& mode, const GuestEnv& env,
                  Executor& executor) {
  std::optional<unsigned> bits;
  if (mode) bits = parse_mode(*mode);
  if (!executor.host_path_available(source)) {
    throw Error(ErrorCode::SourceMissing, "INSTALL source " + source.string() + " does not exist");
  }
  executor.require(actions::copy_in(source, guest_path_on_host(env.root, guest_destination), bits));
}

}  // namespace imgforge
