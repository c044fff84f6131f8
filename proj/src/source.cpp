#include "imgforge/source.hpp"

#include <curl/curl.h>
#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>

#include "imgforge/archive.hpp"
#include "imgforge/digest.hpp"
#include "imgforge/errors.hpp"
#include "imgforge/executor.hpp"
#include "imgforge/plan.hpp"

namespace imgforge {

namespace fs = std::filesystem;

PathStatus probe_path(const fs::path& path) {
  struct stat st {};
  if (::stat(path.c_str(), &st) != 0) return PathStatus::Missing;
  if (S_ISREG(st.st_mode)) return PathStatus::RegularFile;
  if (S_ISBLK(st.st_mode)) return PathStatus::BlockDevice;
  if (S_ISDIR(st.st_mode)) return PathStatus::Directory;
  return PathStatus::Other;
}

std::optional<std::string> url_scheme(std::string_view locator) {
  for (std::string_view scheme : {"http", "https", "ftp"}) {
    if (locator.size() > scheme.size() + 3 && locator.substr(0, scheme.size()) == scheme &&
        locator.substr(scheme.size(), 3) == "://") {
      return std::string(scheme);
    }
  }
  return std::nullopt;
}

SourceKind classify_source(std::string_view locator, const FsProbe& probe) {
  if (locator.empty()) throw Error(ErrorCode::SourceNotFound, "empty source locator");
  if (url_scheme(locator)) return SourceKind::Url;
  switch (probe(fs::path(locator))) {
    case PathStatus::BlockDevice: return SourceKind::BlockDevice;
    case PathStatus::RegularFile: return SourceKind::LocalFile;
    case PathStatus::Directory:
      throw Error(ErrorCode::SourceNotFound, std::string(locator) + " is a directory");
    case PathStatus::Other:
      // FIFOs and character devices are read like plain files
      return SourceKind::LocalFile;
    case PathStatus::Missing: break;
  }
  throw Error(ErrorCode::SourceNotFound, "source " + std::string(locator) + " does not exist");
}

// ---- fetching ----

namespace {

std::size_t write_to_file(char* data, std::size_t size, std::size_t count, void* user) {
  return std::fwrite(data, size, count, static_cast<std::FILE*>(user)) * size;
}

}  // namespace

void CurlFetcher::fetch(const std::string& url, const fs::path& destination) {
  static std::once_flag init;
  std::call_once(init, [] { curl_global_init(CURL_GLOBAL_DEFAULT); });

  std::unique_ptr<std::FILE, decltype(&std::fclose)> out(std::fopen(destination.c_str(), "wb"),
                                                         &std::fclose);
  if (!out) throw Error(ErrorCode::CacheUnwritable, "cannot write " + destination.string());
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), &curl_easy_cleanup);
  if (!curl) throw Error(ErrorCode::FetchFailed, "cannot initialize libcurl");

  char errbuf[CURL_ERROR_SIZE] = {};
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, &write_to_file);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, out.get());
  curl_easy_setopt(curl.get(), CURLOPT_ERRORBUFFER, errbuf);
  curl_easy_setopt(curl.get(), CURLOPT_USERAGENT, "imgforge");

  auto rc = curl_easy_perform(curl.get());
  long http = 0;
  curl_easy_getinfo(curl.get(), CURLINFO_RESPONSE_CODE, &http);
  if (rc != CURLE_OK) {
    std::string why = errbuf[0] ? errbuf : curl_easy_strerror(rc);
    Error err(ErrorCode::FetchFailed, "fetching " + url + " failed: " + why);
    err.with_status(http ? static_cast<int>(http) : static_cast<int>(rc));
    throw err;
  }
  if (std::fflush(out.get()) != 0) {
    throw Error(ErrorCode::CacheUnwritable, "cannot write " + destination.string());
  }
}

// ---- cache ----

std::string cache_key(std::string_view url) { return sha256_hex(url); }

fs::path default_cache_dir(const fs::path& pifile, const char* env_value) {
  if (env_value && *env_value) return fs::path(env_value);
  return pifile.parent_path() / ".pimod-cache";
}

namespace {

class LockFile {
 public:
  explicit LockFile(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(ErrorCode::CacheUnwritable, "cannot create lock " + path.string());
    while (::flock(fd_, LOCK_EX) != 0) {
      if (errno != EINTR) {
        ::close(fd_);
        throw Error(ErrorCode::CacheUnwritable, "cannot lock " + path.string());
      }
    }
  }
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;
  ~LockFile() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }

 private:
  int fd_ = -1;
};

std::optional<CacheEntry> read_entry(const std::string& key, const fs::path& dir) {
  auto image = dir / "image";
  std::ifstream meta(dir / "meta");
  std::error_code ec;
  if (!meta || !fs::is_regular_file(image, ec)) return std::nullopt;
  CacheEntry entry;
  entry.key = key;
  entry.stored_path = image;
  std::string line;
  while (std::getline(meta, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto name = line.substr(0, eq);
    auto value = line.substr(eq + 1);
    try {
      if (name == "url") {
        entry.url = value;
      } else if (name == "fetched_at") {
        entry.fetched_at = std::chrono::system_clock::time_point(std::chrono::seconds(std::stoll(value)));
      } else if (name == "size") {
        entry.size = std::stoull(value);
      }
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  if (fs::file_size(image, ec) != entry.size || ec) return std::nullopt;
  return entry;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || ::access(dir.c_str(), W_OK) != 0) {
    throw Error(ErrorCode::CacheUnwritable, "cache directory " + dir.string() + " is not writable");
  }
}

}  // namespace

std::optional<CacheEntry> lookup_cache(std::string_view url, const fs::path& cache_dir) {
  auto key = cache_key(url);
  auto entry = read_entry(key, cache_dir / key);
  if (entry && entry->url != url) return std::nullopt;
  return entry;
}

fs::path fetch_to_cache(const std::string& url, const fs::path& cache_dir, Fetcher& fetcher,
                        const CacheOptions& options) {
  auto key = cache_key(url);
  auto entry_dir = cache_dir / key;
  if (options.offline) {
    if (auto hit = lookup_cache(url, cache_dir)) return hit->stored_path;
    throw Error(ErrorCode::CacheMiss, url + " is not cached and --offline was given");
  }

  ensure_dir(cache_dir);
  LockFile lock(cache_dir / (key + ".lock"));
  if (!options.refresh) {
    if (auto hit = lookup_cache(url, cache_dir)) return hit->stored_path;
  }

  auto temp = cache_dir / (key + ".tmp." + std::to_string(::getpid()));
  std::error_code ec;
  fs::remove_all(temp, ec);
  fs::create_directories(temp, ec);
  if (ec) throw Error(ErrorCode::CacheUnwritable, "cannot create " + temp.string());

  try {
    fetcher.fetch(url, temp / "image");
    auto size = fs::file_size(temp / "image");
    auto now = std::chrono::duration_cast<std::chrono::seconds>(
                   std::chrono::system_clock::now().time_since_epoch())
                   .count();
    std::ofstream meta(temp / "meta");
    meta << "url=" << url << "\nfetched_at=" << now << "\nsize=" << size << "\n";
    meta.close();
    if (!meta) throw Error(ErrorCode::CacheUnwritable, "cannot write cache metadata");
    fs::remove_all(entry_dir);
    fs::rename(temp, entry_dir);
  } catch (const Error&) {
    fs::remove_all(temp, ec);
    throw;
  } catch (const std::exception& e) {
    fs::remove_all(temp, ec);
    throw Error(ErrorCode::CacheUnwritable, std::string("cache update failed: ") + e.what());
  }
  return entry_dir / "image";
}

// ---- resolution ----

namespace {

// Unpacks `archive` once into `dir`; the `.image` marker names the result.
fs::path extract_cached(const fs::path& archive, const fs::path& dir, const fs::path& lock_path) {
  LockFile lock(lock_path);
  auto marker = dir / ".image";
  if (std::ifstream in(marker); in) {
    std::string name;
    std::getline(in, name);
    std::error_code ec;
    if (!name.empty() && fs::is_regular_file(dir / name, ec)) return dir / name;
  }
  std::error_code ec;
  fs::remove_all(dir, ec);
  auto image = extract_image(archive, dir);
  std::ofstream(marker) << image.filename().string() << "\n";
  return image;
}

}  // namespace

fs::path resolve_source_image(const ExecutionPlan& plan, Executor& executor,
                              const SourceOptions& options) {
  const auto& src = plan.source;
  if (src.kind == SourceKind::BlockDevice) return src.locator;

  if (src.kind == SourceKind::Url) {
    CurlFetcher curl;
    Fetcher& fetcher = options.fetcher ? *options.fetcher : curl;
    auto stored = fetch_to_cache(src.locator, options.cache_dir, fetcher, options.cache);
    executor.require(actions::fetch(src.locator, stored));
    if (detect_archive_format(stored) == ArchiveFormat::Raw) return stored;
    auto key = cache_key(src.locator);
    return extract_cached(stored, stored.parent_path() / "extracted",
                          options.cache_dir / (key + ".lock"));
  }

  fs::path local(src.locator);
  std::error_code ec;
  if (!fs::exists(local, ec)) {
    throw Error(ErrorCode::SourceNotFound, "source " + local.string() + " does not exist");
  }
  if (detect_archive_format(local) == ArchiveFormat::Raw) return local;

  // Local archives unpack into a cache entry keyed by path, size and mtime.
  auto mtime = fs::last_write_time(local).time_since_epoch().count();
  auto key = sha256_hex("file:" + fs::absolute(local).string() + "\n" +
                        std::to_string(fs::file_size(local)) + "\n" + std::to_string(mtime));
  ensure_dir(options.cache_dir);
  return extract_cached(local, options.cache_dir / key / "extracted",
                        options.cache_dir / (key + ".lock"));
}

fs::path materialize_destination(const ExecutionPlan& plan, const fs::path& resolved_source,
                                 Executor& executor) {
  const auto& dst = plan.destination.path;
  if (plan.inplace) return dst;
  if (resolved_source.lexically_normal() == dst.lexically_normal()) return dst;
  std::error_code ec;
  if (fs::equivalent(resolved_source, dst, ec) && !ec) return dst;

  if (plan.destination.is_device) {
    executor.require(actions::device_write(resolved_source, dst));
    return dst;
  }
  if (fs::is_directory(dst, ec)) {
    throw Error(ErrorCode::DestinationIsDirectory, "destination " + dst.string() + " is a directory");
  }
  executor.require(actions::copy(resolved_source, dst));
  return dst;
}

}  // namespace imgforge
