#include "imgforge/action.hpp"

#include <charconv>
#include <cstdio>
#include <stdexcept>

#include "imgforge/image.hpp"

namespace imgforge {

namespace fs = std::filesystem;

namespace {

constexpr std::pair<ActionKind, std::string_view> kKindNames[] = {
    {ActionKind::Copy, "copy"},
    {ActionKind::DeviceWrite, "device-write"},
    {ActionKind::Fetch, "fetch"},
    {ActionKind::Grow, "grow"},
    {ActionKind::TableWrite, "table-write"},
    {ActionKind::FsResize, "fs-resize"},
    {ActionKind::LoopAttach, "loop-attach"},
    {ActionKind::MountPartition, "mount"},
    {ActionKind::BindMount, "bind"},
    {ActionKind::CopyEmulator, "copy-emulator"},
    {ActionKind::RemoveEmulator, "remove-emulator"},
    {ActionKind::Unmount, "umount"},
    {ActionKind::LoopDetach, "loop-detach"},
    {ActionKind::HostExec, "host-exec"},
    {ActionKind::GuestExec, "guest-exec"},
    {ActionKind::CopyIn, "copy-in"},
};

constexpr std::string_view kFailed = "failed";

Action make(ActionKind kind, Fields fields) { return Action{kind, std::move(fields), 0}; }

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    parts.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return parts;
}

}  // namespace

std::string_view action_kind_name(ActionKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "?";
}

std::optional<ActionKind> parse_action_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

const std::string* Action::find(std::string_view key) const {
  for (const auto& [k, v] : fields) {
    if (k == key) return &v;
  }
  return nullptr;
}

const std::string& Action::at(std::string_view key) const {
  if (const auto* v = find(key)) return *v;
  throw std::out_of_range("action " + std::string(action_kind_name(kind)) + " has no field " +
                          std::string(key));
}

Action& Action::set(std::string key, std::string value) {
  for (auto& [k, v] : fields) {
    if (k == key) {
      v = std::move(value);
      return *this;
    }
  }
  fields.emplace_back(std::move(key), std::move(value));
  return *this;
}

namespace actions {

Action copy(const fs::path& source, const fs::path& destination) {
  return make(ActionKind::Copy, {{"src", source.string()}, {"dst", destination.string()}});
}

Action device_write(const fs::path& source, const fs::path& device) {
  return make(ActionKind::DeviceWrite, {{"src", source.string()}, {"device", device.string()}});
}

Action fetch(const std::string& url, const fs::path& stored) {
  return make(ActionKind::Fetch, {{"url", url}, {"path", stored.string()}});
}

Action grow(const fs::path& image, std::uint64_t bytes) {
  return make(ActionKind::Grow, {{"image", image.string()}, {"bytes", std::to_string(bytes)}});
}

Action table_write(const fs::path& image, const PartitionEntry& entry) {
  return make(ActionKind::TableWrite, {{"image", image.string()},
                                       {"partition", std::to_string(entry.index)},
                                       {"lba_start", std::to_string(entry.lba_start)},
                                       {"lba_size", std::to_string(entry.lba_size)}});
}

Action fs_resize(const fs::path& image, const PartitionEntry& entry) {
  return make(ActionKind::FsResize,
              {{"image", image.string()},
               {"partition", std::to_string(entry.index)},
               {"offset", std::to_string(std::uint64_t{entry.lba_start} * kSectorSize)},
               {"size", std::to_string(std::uint64_t{entry.lba_size} * kSectorSize)},
               {"tool", "resize2fs"}});
}

Action host_exec(const fs::path& cwd, const std::string& command,
                 const std::optional<std::string>& input) {
  auto a = make(ActionKind::HostExec, {{"cwd", cwd.string()}, {"command", command}});
  if (input) a.set("stdin", *input);
  return a;
}

Action guest_exec(const fs::path& root, const std::string& path_var, const std::string& command,
                  const std::optional<std::string>& input) {
  auto a = make(ActionKind::GuestExec,
                {{"root", root.string()}, {"path", path_var}, {"command", command}});
  if (input) a.set("stdin", *input);
  return a;
}

Action copy_in(const fs::path& source, const fs::path& destination, std::optional<unsigned> mode) {
  auto a = make(ActionKind::CopyIn, {{"src", source.string()}, {"dst", destination.string()}});
  if (mode) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%o", *mode);
    a.set("mode", buf);
  }
  return a;
}

}  // namespace actions

std::string escape_value(std::string_view value) {
  std::string out;
  out.reserve(value.size());
  for (char c : value) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape_value(std::string_view value) {
  std::string out;
  out.reserve(value.size());
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (value[i] != '\\' || i + 1 == value.size()) {
      out.push_back(value[i]);
      continue;
    }
    switch (value[++i]) {
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      default: out.push_back(value[i]);
    }
  }
  return out;
}

std::string format_action(const Action& action) {
  auto line = std::to_string(action.ordinal) + "\t" + std::string(action_kind_name(action.kind));
  for (const auto& [key, value] : action.fields) line += "\t" + key + "=" + escape_value(value);
  return line;
}

std::string format_failure(std::uint64_t ordinal, std::uint64_t failed_ordinal, int status) {
  return std::to_string(ordinal) + "\t" + std::string(kFailed) +
         "\tof=" + std::to_string(failed_ordinal) + "\tstatus=" + std::to_string(status);
}

std::vector<LogRecord> parse_action_log(std::string_view text) {
  std::vector<LogRecord> records;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;

    auto parts = split_tabs(line);
    if (parts.size() < 2) throw std::invalid_argument("malformed log line: " + std::string(line));
    LogRecord record;
    auto [ptr, ec] = std::from_chars(parts[0].data(), parts[0].data() + parts[0].size(),
                                     record.ordinal);
    if (ec != std::errc{} || ptr != parts[0].data() + parts[0].size()) {
      throw std::invalid_argument("bad ordinal in log line: " + std::string(line));
    }
    record.kind = parts[1];
    if (record.kind != kFailed && !parse_action_kind(record.kind)) {
      throw std::invalid_argument("unknown action kind: " + record.kind);
    }
    for (std::size_t i = 2; i < parts.size(); ++i) {
      auto eq = parts[i].find('=');
      if (eq == std::string_view::npos) {
        throw std::invalid_argument("field without '=' in log line: " + std::string(line));
      }
      record.fields.emplace_back(std::string(parts[i].substr(0, eq)),
                                 unescape_value(parts[i].substr(eq + 1)));
    }
    records.push_back(std::move(record));
  }
  return records;
}

std::optional<Action> to_action(const LogRecord& record) {
  auto kind = parse_action_kind(record.kind);
  if (!kind) return std::nullopt;
  return Action{*kind, record.fields, record.ordinal};
}

}  // namespace imgforge
