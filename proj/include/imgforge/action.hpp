#pragma once

// Actions are the complete vocabulary of externally observable effects.
// Serialized form, one per line:
//
//   ORDINAL<TAB>KIND<TAB>key=value<TAB>key=value...
//
// Values escape backslash, tab, CR and LF as \\, \t, \r and \n. A failed
// action is followed by a `failed` record naming its ordinal and status.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace imgforge {

struct PartitionEntry;

enum class ActionKind {
  Copy,
  DeviceWrite,
  Fetch,
  Grow,
  TableWrite,
  FsResize,
  LoopAttach,
  MountPartition,
  BindMount,
  CopyEmulator,
  RemoveEmulator,
  Unmount,
  LoopDetach,
  HostExec,
  GuestExec,
  CopyIn,
};

inline constexpr std::array kAllActionKinds = {
    ActionKind::Copy,          ActionKind::DeviceWrite,    ActionKind::Fetch,
    ActionKind::Grow,          ActionKind::TableWrite,     ActionKind::FsResize,
    ActionKind::LoopAttach,    ActionKind::MountPartition, ActionKind::BindMount,
    ActionKind::CopyEmulator,  ActionKind::RemoveEmulator, ActionKind::Unmount,
    ActionKind::LoopDetach,    ActionKind::HostExec,       ActionKind::GuestExec,
    ActionKind::CopyIn,
};

std::string_view action_kind_name(ActionKind kind);
std::optional<ActionKind> parse_action_kind(std::string_view name);

using Fields = std::vector<std::pair<std::string, std::string>>;

struct Action {
  ActionKind kind{};
  Fields fields;
  std::uint64_t ordinal = 0;

  const std::string* find(std::string_view key) const;
  /// Throws std::out_of_range when the field is absent.
  const std::string& at(std::string_view key) const;
  Action& set(std::string key, std::string value);

  bool operator==(const Action&) const = default;
};

/// Placeholder for the loop device bound by a LoopAttach action.
inline constexpr std::string_view kLoopHandle = "@loop";

namespace actions {

Action copy(const std::filesystem::path& source, const std::filesystem::path& destination);
Action device_write(const std::filesystem::path& source, const std::filesystem::path& device);
Action fetch(const std::string& url, const std::filesystem::path& stored);
Action grow(const std::filesystem::path& image, std::uint64_t bytes);
Action table_write(const std::filesystem::path& image, const PartitionEntry& entry);
Action fs_resize(const std::filesystem::path& image, const PartitionEntry& entry);
Action host_exec(const std::filesystem::path& cwd, const std::string& command,
                 const std::optional<std::string>& input);
Action guest_exec(const std::filesystem::path& root, const std::string& path_var,
                  const std::string& command, const std::optional<std::string>& input);
Action copy_in(const std::filesystem::path& source, const std::filesystem::path& destination,
               std::optional<unsigned> mode);

}  // namespace actions

std::string escape_value(std::string_view value);
std::string unescape_value(std::string_view value);

std::string format_action(const Action& action);
std::string format_failure(std::uint64_t ordinal, std::uint64_t failed_ordinal, int status);

/// One parsed log line; `kind` is an action kind name or "failed".
struct LogRecord {
  std::uint64_t ordinal = 0;
  std::string kind;
  Fields fields;

  bool operator==(const LogRecord&) const = default;
};

/// Throws std::invalid_argument on a malformed line.
std::vector<LogRecord> parse_action_log(std::string_view text);

/// Rebuilds an action from a record; nullopt for `failed` records.
std::optional<Action> to_action(const LogRecord& record);

}  // namespace imgforge
