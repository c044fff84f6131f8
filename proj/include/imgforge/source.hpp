#pragma once

// Source resolution: what FROM names, where downloads are cached, and how
// the destination image comes into existence.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace imgforge {

struct ExecutionPlan;
class Executor;

enum class PathStatus { Missing, RegularFile, BlockDevice, Directory, Other };

using FsProbe = std::function<PathStatus(const std::filesystem::path&)>;

/// Live filesystem probe (follows symlinks).
PathStatus probe_path(const std::filesystem::path& path);

enum class SourceKind { LocalFile, BlockDevice, Url };

struct SourceSpec {
  SourceKind kind = SourceKind::LocalFile;
  std::string locator;
  int partition_index = 2;

  bool operator==(const SourceSpec&) const = default;
};

/// "http", "https" or "ftp" when `locator` starts with `<scheme>://`.
std::optional<std::string> url_scheme(std::string_view locator);

SourceKind classify_source(std::string_view locator, const FsProbe& probe);

/// Downloads one URL to a local file. Implementations throw
/// Error(FetchFailed) and may leave `destination` partially written.
class Fetcher {
 public:
  virtual ~Fetcher() = default;
  virtual void fetch(const std::string& url, const std::filesystem::path& destination) = 0;
};

/// libcurl-backed fetcher for http, https and ftp.
class CurlFetcher final : public Fetcher {
 public:
  void fetch(const std::string& url, const std::filesystem::path& destination) override;
};

struct CacheEntry {
  std::string key;
  std::filesystem::path stored_path;
  std::chrono::system_clock::time_point fetched_at;
  std::string url;
  std::uint64_t size = 0;
};

struct CacheOptions {
  bool refresh = false;  // re-download even on a hit
  bool offline = false;  // never fetch; a miss is an error
};

/// SHA-256 hex digest of the exact URL string.
std::string cache_key(std::string_view url);

/// `$PIMOD_CACHE` when set, else `.pimod-cache` beside the Pifile.
std::filesystem::path default_cache_dir(const std::filesystem::path& pifile,
                                        const char* env_value);

std::optional<CacheEntry> lookup_cache(std::string_view url,
                                       const std::filesystem::path& cache_dir);

/// Returns `<cache>/<key>/image`, downloading it only on a miss. Downloads
/// go to a temporary name and are renamed into place, so a failed fetch
/// leaves no entry behind. Entries are guarded by `<key>.lock`.
std::filesystem::path fetch_to_cache(const std::string& url,
                                     const std::filesystem::path& cache_dir, Fetcher& fetcher,
                                     const CacheOptions& options = {});

/// Decompresses a single-image archive (.zip, .gz, .xz, .zst) into
/// `workspace` and returns the image path. Raw images come back unchanged.
/// Files without a known suffix are sniffed by magic bytes.
std::filesystem::path extract_image(const std::filesystem::path& archive,
                                    const std::filesystem::path& workspace);

struct SourceOptions {
  std::filesystem::path cache_dir;
  Fetcher* fetcher = nullptr;
  CacheOptions cache;
};

/// Turns the plan's source into a local raw image path: downloads URLs
/// into the cache (recording a Fetch action) and unpacks archives into
/// their cache entry.
std::filesystem::path resolve_source_image(const ExecutionPlan& plan, Executor& executor,
                                           const SourceOptions& options);

/// Copies the resolved source to the destination through `executor`
/// (device write for block devices, nothing for in-place plans) and
/// returns the image path later stages operate on.
std::filesystem::path materialize_destination(const ExecutionPlan& plan,
                                              const std::filesystem::path& resolved_source,
                                              Executor& executor);

}  // namespace imgforge
