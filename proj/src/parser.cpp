#include "imgforge/parser.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

namespace imgforge {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kWhitespace = " \t\f\v";

std::string_view trim(std::string_view s) {
  auto begin = s.find_first_not_of(kWhitespace);
  if (begin == std::string_view::npos) return {};
  auto end = s.find_last_not_of(kWhitespace);
  return s.substr(begin, end - begin + 1);
}

bool is_name_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_name_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

bool is_all_caps_word(std::string_view token) {
  return !token.empty() && std::all_of(token.begin(), token.end(), [](char c) {
    return std::isupper(static_cast<unsigned char>(c)) || c == '_';
  });
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

struct HeredocMarker {
  std::string command;
  std::string delimiter;
  bool quoted = false;
  bool strip_tabs = false;
};

std::optional<HeredocMarker> find_heredoc_marker(std::string_view rest) {
  static const std::regex marker(
      R"(^(.*?)[ \t]*<<(-?)[ \t]*(['"]?)([A-Za-z_][A-Za-z0-9_]*)\3[ \t]*$)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_match(rest.begin(), rest.end(), m, marker)) return std::nullopt;
  std::string command = m[1].str();
  // `<<<` is a here-string, not a here-document.
  if (!command.empty() && command.back() == '<') return std::nullopt;
  return HeredocMarker{std::string(trim(command)), m[4].str(), m[3].length() > 0,
                       m[2].length() > 0};
}

void check_arity(CommandKind kind, std::size_t n, const SourceLine& origin) {
  auto fail = [&](std::string_view expected) {
    throw Error(ErrorCode::MalformedArgs,
                std::string(command_keyword(kind)) + " expects " + std::string(expected) +
                    ", got " + std::to_string(n),
                origin);
  };
  switch (kind) {
    case CommandKind::From:
      if (n < 1 || n > 2) fail("<source> [partition]");
      break;
    case CommandKind::To:
    case CommandKind::Inplace:
    case CommandKind::Pump:
    case CommandKind::Path:
    case CommandKind::Include:
      if (n != 1) fail("exactly one argument");
      break;
    case CommandKind::Install:
      if (n < 2 || n > 3) fail("[mode] <source> <destination>");
      break;
    case CommandKind::Run:
    case CommandKind::Host:
      if (n < 1) fail("a command");
      break;
  }
}

struct ParseContext {
  const Environment& env;
  std::vector<fs::path> include_stack;
  std::vector<std::string>& warnings;
};

void parse_into(std::string_view text, const fs::path& path, ParseContext& ctx, int depth,
                std::vector<Command>& out);

std::string expand(std::string_view text, ParseContext& ctx, const SourceLine& origin,
                   bool honor_quotes) {
  std::vector<std::string> undefined;
  auto result = substitute_env(text, ctx.env, honor_quotes, &undefined);
  for (const auto& name : undefined) {
    ctx.warnings.push_back(origin.file.filename().string() + ":" +
                           std::to_string(origin.line_no) + ": undefined variable " + name +
                           " expands to an empty string");
  }
  return result;
}

// Splits argument text into words. Quotes group whitespace and are removed;
// adjacent quoted and bare segments concatenate into one word. Variables
// expand outside single quotes and never split or re-quote a word.
std::vector<std::string> split_words(std::string_view text, ParseContext& ctx,
                                     const SourceLine& origin) {
  std::vector<std::string> words;
  std::string current, pending;
  bool in_word = false;
  char quote = 0;
  auto flush = [&] {
    current += expand(pending, ctx, origin, /*honor_quotes=*/false);
    pending.clear();
  };
  for (char c : text) {
    if (quote == '\'') {
      if (c == '\'') {
        quote = 0;
      } else {
        current.push_back(c);
      }
      continue;
    }
    if (quote == '"') {
      if (c == '"') {
        flush();
        quote = 0;
      } else {
        pending.push_back(c);
      }
      continue;
    }
    if (c == '\'' || c == '"') {
      flush();
      quote = c;
      in_word = true;
    } else if (kWhitespace.find(c) != std::string_view::npos) {
      if (in_word) {
        flush();
        words.push_back(std::move(current));
        current.clear();
        in_word = false;
      }
    } else {
      pending.push_back(c);
      in_word = true;
    }
  }
  if (quote != 0) {
    throw Error(ErrorCode::MalformedArgs, "unterminated quote in arguments", origin);
  }
  if (in_word) {
    flush();
    words.push_back(std::move(current));
  }
  return words;
}

void include_file(const std::string& target, const SourceLine& origin, ParseContext& ctx,
                  int depth, std::vector<Command>& out) {
  fs::path included = fs::path(target);
  if (included.is_relative()) included = origin.file.parent_path() / included;
  std::error_code ec;
  if (!fs::is_regular_file(included, ec)) {
    throw Error(ErrorCode::IncludeNotFound, "included file not found: " + included.string(),
                origin);
  }
  if (depth + 1 >= kMaxIncludeDepth) {
    throw Error(ErrorCode::IncludeCycle,
                "include depth limit of " + std::to_string(kMaxIncludeDepth) + " reached",
                origin);
  }
  auto canonical = fs::weakly_canonical(included, ec);
  if (std::find(ctx.include_stack.begin(), ctx.include_stack.end(), canonical) !=
      ctx.include_stack.end()) {
    throw Error(ErrorCode::IncludeCycle, "include cycle through " + included.string(), origin);
  }
  ctx.include_stack.push_back(canonical);
  parse_into(read_file(included), included, ctx, depth + 1, out);
  ctx.include_stack.pop_back();
}

void parse_into(std::string_view text, const fs::path& path, ParseContext& ctx, int depth,
                std::vector<Command>& out) {
  LineCursor lines(path, text);
  while (!lines.at_end()) {
    SourceLine origin = lines.next();
    auto stripped = trim(origin.text);
    if (stripped.empty() || stripped.front() == '#') continue;

    std::string logical(stripped);
    while (!logical.empty() && logical.back() == '\\') {
      logical.pop_back();
      if (lines.at_end()) break;
      logical += lines.next().text;
    }
    origin.text = logical;

    auto split = logical.find_first_of(kWhitespace);
    auto token = std::string_view(logical).substr(0, split);
    auto rest = split == std::string::npos ? std::string_view{}
                                           : trim(std::string_view(logical).substr(split));

    auto kind = classify_token(token);
    if (!kind) {
      auto what = is_all_caps_word(token) ? "unknown command " : "unsupported statement ";
      throw Error(ErrorCode::UnknownCommand, what + std::string(token), origin);
    }

    Command cmd{*kind, {}, std::nullopt, origin};
    auto marker = find_heredoc_marker(rest);
    if (*kind == CommandKind::Run || *kind == CommandKind::Host) {
      if (marker) {
        auto raw = parse_heredoc(lines, marker->delimiter, origin, marker->strip_tabs);
        cmd.heredoc = marker->quoted ? raw : expand(raw, ctx, origin, /*honor_quotes=*/false);
        auto text = expand(marker->command, ctx, origin, /*honor_quotes=*/true);
        if (!trim(text).empty()) cmd.args.emplace_back(trim(text));
      } else if (!rest.empty()) {
        auto text = expand(rest, ctx, origin, /*honor_quotes=*/true);
        if (!trim(text).empty()) cmd.args.emplace_back(trim(text));
      }
    } else {
      if (marker) {
        throw Error(ErrorCode::MalformedArgs,
                    "here-documents are only allowed on RUN and HOST", origin);
      }
      cmd.args = split_words(rest, ctx, origin);
    }
    check_arity(cmd.kind, cmd.args.size(), origin);

    if (cmd.kind == CommandKind::Include) {
      include_file(cmd.args.front(), origin, ctx, depth, out);
    } else {
      out.push_back(std::move(cmd));
    }
  }
}

bool needs_quoting(std::string_view word) {
  return word.empty() || word.find_first_of(" \t\f\v'\"\\") != std::string_view::npos;
}

// `$` outside single quotes becomes `\$`, tracking quotes exactly as
// substitute_env does so the escape is undone on re-parse.
std::string escape_dollars(std::string_view text, bool honor_quotes) {
  std::string out;
  char quote = 0;
  for (char c : text) {
    if (honor_quotes) {
      if (quote == 0 && (c == '\'' || c == '"')) {
        quote = c;
      } else if (quote == c) {
        quote = 0;
      }
    }
    if (c == '$' && quote != '\'') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

std::string render_word(std::string_view word) {
  if (!needs_quoting(word)) return escape_dollars(word, true);
  std::string out;
  bool open = false;
  for (char c : word) {
    if (c == '\'') {
      if (open) out.push_back('\'');
      open = false;
      out += "\"'\"";
      continue;
    }
    if (!open) out.push_back('\'');
    open = true;
    out.push_back(c);
  }
  if (open) out.push_back('\'');
  if (out.empty()) out = "''";
  return out;
}

std::string pick_delimiter(std::string_view body) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < body.size()) {
    auto end = body.find('\n', start);
    if (end == std::string_view::npos) end = body.size();
    lines.push_back(body.substr(start, end - start));
    start = end + 1;
  }
  std::string candidate = "EOF";
  for (int n = 1; std::find(lines.begin(), lines.end(), candidate) != lines.end(); ++n) {
    candidate = "EOF_" + std::to_string(n);
  }
  return candidate;
}

}  // namespace

std::string_view command_keyword(CommandKind kind) {
  switch (kind) {
    case CommandKind::From: return "FROM";
    case CommandKind::To: return "TO";
    case CommandKind::Inplace: return "INPLACE";
    case CommandKind::Pump: return "PUMP";
    case CommandKind::Path: return "PATH";
    case CommandKind::Run: return "RUN";
    case CommandKind::Install: return "INSTALL";
    case CommandKind::Host: return "HOST";
    case CommandKind::Include: return "INCLUDE";
  }
  return "?";
}

std::optional<CommandKind> classify_token(std::string_view token) {
  static constexpr std::pair<std::string_view, CommandKind> kTable[] = {
      {"FROM", CommandKind::From},       {"TO", CommandKind::To},
      {"INPLACE", CommandKind::Inplace}, {"PUMP", CommandKind::Pump},
      {"PATH", CommandKind::Path},       {"RUN", CommandKind::Run},
      {"INSTALL", CommandKind::Install}, {"HOST", CommandKind::Host},
      {"INCLUDE", CommandKind::Include}, {"source", CommandKind::Include},
  };
  for (const auto& [name, kind] : kTable) {
    if (token == name) return kind;
  }
  return std::nullopt;
}

LineCursor::LineCursor(fs::path file, std::string_view text) {
  int line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines_.push_back(SourceLine{file, ++line_no, std::string(line)});
    start = end + 1;
  }
}

std::string parse_heredoc(LineCursor& lines, std::string_view delimiter, const SourceLine& opener,
                          bool strip_tabs) {
  std::string body;
  while (!lines.at_end()) {
    auto line = lines.next();
    if (strip_tabs) line.text.erase(0, line.text.find_first_not_of('\t'));
    if (line.text == delimiter) return body;
    body += line.text;
    body.push_back('\n');
  }
  throw Error(ErrorCode::UnterminatedHeredoc,
              "here-document not terminated by '" + std::string(delimiter) + "'", opener);
}

std::string substitute_env(std::string_view text, const Environment& env, bool honor_quotes,
                           std::vector<std::string>* undefined) {
  std::string out;
  out.reserve(text.size());
  char quote = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (honor_quotes) {
      if (quote == 0 && (c == '\'' || c == '"')) {
        quote = c;
      } else if (quote == c) {
        quote = 0;
      }
      if (quote == '\'') {
        out.push_back(c);
        continue;
      }
    }
    if (c == '\\' && i + 1 < text.size() && text[i + 1] == '$') {
      out.push_back('$');
      ++i;
      continue;
    }
    if (c != '$' || i + 1 >= text.size()) {
      out.push_back(c);
      continue;
    }
    std::string name;
    std::size_t consumed = 0;
    if (text[i + 1] == '{') {
      auto close = text.find('}', i + 2);
      if (close != std::string_view::npos) {
        auto inner = text.substr(i + 2, close - i - 2);
        if (!inner.empty() && is_name_start(inner.front()) &&
            std::all_of(inner.begin(), inner.end(), is_name_char)) {
          name = inner;
          consumed = close - i + 1;
        }
      }
    } else if (is_name_start(text[i + 1])) {
      std::size_t j = i + 1;
      while (j < text.size() && is_name_char(text[j])) ++j;
      name = text.substr(i + 1, j - i - 1);
      consumed = j - i;
    }
    if (consumed == 0) {
      out.push_back(c);
      continue;
    }
    if (auto it = env.find(name); it != env.end()) {
      out += it->second;
    } else if (undefined) {
      undefined->push_back(name);
    }
    i += consumed - 1;
  }
  return out;
}

Pifile parse_pifile_text(std::string_view text, const fs::path& path, const Environment& env,
                         int include_depth) {
  if (include_depth < 0 || include_depth >= kMaxIncludeDepth) {
    throw Error(ErrorCode::IncludeCycle, "include depth limit reached at " + path.string());
  }
  Pifile pifile;
  pifile.source_path = path;
  std::error_code ec;
  ParseContext ctx{env, {fs::weakly_canonical(path, ec)}, pifile.warnings};
  parse_into(text, path, ctx, include_depth, pifile.commands);
  return pifile;
}

Pifile parse_pifile(const fs::path& path, const Environment& env, int include_depth) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) {
    throw Error(ErrorCode::PifileNotFound, "cannot read Pifile " + path.string());
  }
  return parse_pifile_text(read_file(path), path, env, include_depth);
}

std::string render_pifile(const std::vector<Command>& commands) {
  std::string out;
  for (const auto& cmd : commands) {
    out += command_keyword(cmd.kind);
    if (cmd.kind == CommandKind::Run || cmd.kind == CommandKind::Host) {
      if (!cmd.args.empty()) {
        out.push_back(' ');
        out += escape_dollars(cmd.args.front(), true);
      }
      if (cmd.heredoc) {
        auto delimiter = pick_delimiter(*cmd.heredoc);
        out += " << " + delimiter + "\n";
        out += escape_dollars(*cmd.heredoc, false);
        if (!cmd.heredoc->empty() && cmd.heredoc->back() != '\n') out.push_back('\n');
        out += delimiter;
      }
    } else {
      for (const auto& arg : cmd.args) {
        out.push_back(' ');
        out += render_word(arg);
      }
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace imgforge
