#pragma once

#include <stdlib.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "imgforge/errors.hpp"
#include "imgforge/source.hpp"

namespace testing {

namespace fs = std::filesystem;

inline fs::path data_dir() { return fs::path(IMGFORGE_TEST_DATA); }

class TempDir {
 public:
  TempDir() {
    std::string pattern = (fs::temp_directory_path() / "imgforge-test-XXXXXX").string();
    if (!::mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const fs::path& p) const { return path_ / p; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

inline void sized_file(const fs::path& path, std::uintmax_t bytes) {
  { std::ofstream touch(path, std::ios::binary | std::ios::trunc); }
  fs::resize_file(path, bytes);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// stdout of a shell command, or nullopt when it exits nonzero.
inline std::optional<std::string> shell(const std::string& command) {
  std::unique_ptr<FILE, decltype(&pclose)> pipe(popen(command.c_str(), "r"), &pclose);
  if (!pipe) return std::nullopt;
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe.get())) > 0) out.append(buf, n);
  int status = pclose(pipe.release());
  if (status != 0) return std::nullopt;
  return out;
}

inline bool have_tool(const std::string& name) {
  return shell("PATH=$PATH:/usr/sbin:/sbin command -v " + name + " >/dev/null 2>&1").has_value();
}

/// Listing of every file below `dir`, relative, sorted.
inline std::string tree(const fs::path& dir) {
  std::map<std::string, std::uintmax_t> entries;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    entries[fs::relative(e.path(), dir).string()] = e.is_regular_file() ? e.file_size() : 0;
  }
  std::string out;
  for (const auto& [name, size] : entries) out += name + " " + std::to_string(size) + "\n";
  return out;
}

/// Serves canned bodies and counts calls; `fail_after` bytes simulates a
/// broken transfer.
class CountingFetcher : public imgforge::Fetcher {
 public:
  std::map<std::string, std::string> bodies;
  int calls = 0;
  std::optional<std::size_t> fail_after;

  void fetch(const std::string& url, const fs::path& destination) override {
    ++calls;
    auto it = bodies.find(url);
    std::string body = it == bodies.end() ? std::string() : it->second;
    std::ofstream out(destination, std::ios::binary);
    if (fail_after) {
      out << body.substr(0, *fail_after);
      out.close();
      throw imgforge::Error(imgforge::ErrorCode::FetchFailed, "connection reset").with_status(56);
    }
    if (it == bodies.end()) {
      throw imgforge::Error(imgforge::ErrorCode::FetchFailed, "404").with_status(404);
    }
    out << body;
  }
};

}  // namespace testing
