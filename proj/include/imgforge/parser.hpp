#pragma once

// Pifile reader: one directive per logical line, `#` comments, blank lines,
// `$NAME`/`${NAME}` substitution, here-documents on RUN/HOST and file
// inclusion through INCLUDE (or `source`).

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "imgforge/errors.hpp"

namespace imgforge {

using Environment = std::map<std::string, std::string>;

enum class CommandKind { From, To, Inplace, Pump, Path, Run, Install, Host, Include };

std::string_view command_keyword(CommandKind kind);

struct Command {
  CommandKind kind;
  std::vector<std::string> args;
  std::optional<std::string> heredoc;
  SourceLine origin;

  /// Content equality. `origin` is location metadata and does not take part.
  friend bool operator==(const Command& a, const Command& b) {
    return a.kind == b.kind && a.args == b.args && a.heredoc == b.heredoc;
  }
};

struct Pifile {
  std::vector<Command> commands;
  std::filesystem::path source_path;
  std::vector<std::string> warnings;
};

inline constexpr int kMaxIncludeDepth = 16;

/// Exact, case-sensitive keyword lookup; lowercase `source` is accepted as
/// an alias of INCLUDE.
std::optional<CommandKind> classify_token(std::string_view first_token);

/// Forward cursor over the physical lines of one file.
class LineCursor {
 public:
  LineCursor(std::filesystem::path file, std::string_view text);

  bool at_end() const { return pos_ >= lines_.size(); }
  const SourceLine& peek() const { return lines_[pos_]; }
  SourceLine next() { return lines_[pos_++]; }

 private:
  std::vector<SourceLine> lines_;
  std::size_t pos_ = 0;
};

/// Collects the raw body of a here-document up to the first line equal to
/// `delimiter`, which is consumed. Each body line ends with '\n'. With
/// `strip_tabs` (the `<<-` form) leading tabs are removed first.
std::string parse_heredoc(LineCursor& lines, std::string_view delimiter,
                          const SourceLine& opener, bool strip_tabs = false);

/// Shell-style variable expansion. Single-quoted regions are left alone when
/// `honor_quotes` is set; `\$` yields a literal dollar. Names missing from
/// `env` expand to "" and are reported through `undefined`.
std::string substitute_env(std::string_view text, const Environment& env, bool honor_quotes,
                           std::vector<std::string>* undefined = nullptr);

Pifile parse_pifile(const std::filesystem::path& path, const Environment& env,
                    int include_depth = 0);

/// Parses in-memory text as if it were the file at `path`; includes are
/// still resolved on disk relative to `path`.
Pifile parse_pifile_text(std::string_view text, const std::filesystem::path& path,
                         const Environment& env, int include_depth = 0);

/// Canonical text for a command list. Re-parsing the result with any
/// environment yields the same commands.
std::string render_pifile(const std::vector<Command>& commands);

}  // namespace imgforge
