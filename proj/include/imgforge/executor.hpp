#pragma once

// The executor is the only place where effects happen. Everything else
// describes effects as Actions and hands them to an Executor backend.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "imgforge/action.hpp"
#include "imgforge/image.hpp"

namespace imgforge {

using OutputSink = std::function<void(std::string_view line)>;

class Executor {
 public:
  virtual ~Executor() = default;

  /// Numbers, records and performs one action. Returns its exit status; a
  /// nonzero status is followed by a `failed` record in the log.
  int run(Action action);

  /// run(), throwing Error(CommandFailed) on a nonzero status.
  void require(Action action);

  const std::vector<Action>& actions() const { return actions_; }
  const std::vector<std::string>& log_lines() const { return log_; }
  std::string log_text() const;

  /// Receives command output line by line while it is produced.
  void set_output_sink(OutputSink sink) { sink_ = std::move(sink); }

  virtual bool dry_run() const = 0;

  virtual PartitionTable read_partition_table(const std::filesystem::path& image) = 0;
  virtual std::uint64_t image_size(const std::filesystem::path& image) = 0;
  /// Reads a file of the mounted guest; nullopt when it does not exist.
  virtual std::optional<std::string> read_guest_file(const std::filesystem::path& root,
                                                     const std::filesystem::path& guest_path) = 0;
  /// Whether a host file can be installed at this point of the run.
  virtual bool host_path_available(const std::filesystem::path& path) = 0;
  /// SHA-256 of the final image, when the backend can compute it.
  virtual std::optional<std::string> image_digest(const std::filesystem::path& image) = 0;

 protected:
  virtual int perform(const Action& action) = 0;
  void emit_output(std::string_view line) const {
    if (sink_) sink_(line);
  }

 private:
  std::vector<Action> actions_;
  std::vector<std::string> log_;
  std::uint64_t next_ordinal_ = 1;
  OutputSink sink_;
};

struct GuestEnv {
  std::filesystem::path root;
  std::vector<std::string> path_var;
  std::map<std::string, std::string> extra_env;

  /// `path_var` joined with ':'.
  std::string path_string() const;
};

/// Pifile PATH extensions first, then the host PATH entries; later
/// duplicates are dropped.
std::vector<std::string> compose_guest_path(const std::vector<std::string>& extensions,
                                            std::string_view host_path);

/// Octal permission bits, 0..7777. Throws InvalidMode.
unsigned parse_mode(std::string_view text);

int run_host(const std::string& command, const std::optional<std::string>& input,
             const std::filesystem::path& cwd, Executor& executor);

int run_guest(const std::string& command, const std::optional<std::string>& input,
              const GuestEnv& env, Executor& executor);

/// Copies a host file or directory into the guest. `guest_destination` is
/// interpreted relative to `env.root`; `mode` is octal text.
void install_file(const std::filesystem::path& source,
                  const std::filesystem::path& guest_destination,
                  const std::optional<std::string>& mode, const GuestEnv& env,
                  Executor& executor);

/// Joins a guest path under a host-side root directory.
std::filesystem::path guest_path_on_host(const std::filesystem::path& root,
                                         const std::filesystem::path& guest_path);

}  // namespace imgforge
