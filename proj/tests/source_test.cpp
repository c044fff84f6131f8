#include <doctest.h>

#include "imgforge/archive.hpp"
#include "imgforge/digest.hpp"
#include "imgforge/dry_run_executor.hpp"
#include "imgforge/plan.hpp"
#include "imgforge/source.hpp"
#include "support.hpp"

using namespace imgforge;
using testing::CountingFetcher;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

ErrorCode error_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoFailure;
}

std::string pattern_bytes(std::size_t n, unsigned seed) {
  std::string s(n, '\0');
  for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<char>((i * 2654435761u + seed) >> 13);
  return s;
}

bool has_python_zip() { return testing::have_tool("python3"); }

void make_zip(const fs::path& zip, const std::vector<std::pair<std::string, fs::path>>& members,
              bool deflate = true) {
  std::string script = "import sys, zipfile; z = zipfile.ZipFile(sys.argv[1], 'w', " +
                       std::string(deflate ? "zipfile.ZIP_DEFLATED" : "zipfile.ZIP_STORED") + ")\n";
  std::string args = "'" + zip.string() + "'";
  int i = 2;
  for (const auto& [name, path] : members) {
    script += "z.write(sys.argv[" + std::to_string(i) + "], sys.argv[" + std::to_string(i + 1) +
              "])\n";
    i += 2;
    args += " '" + path.string() + "' '" + name + "'";
  }
  script += "z.close()\n";
  auto py = zip.parent_path() / "mkzip.py";
  testing::write_file(py, script);
  REQUIRE(testing::shell("python3 '" + py.string() + "' " + args));
}

}  // namespace

TEST_CASE("classify_source") {
  auto probe = [](const fs::path& p) {
    if (p == "/dev/sdc") return PathStatus::BlockDevice;
    if (p == "./base.img") return PathStatus::RegularFile;
    if (p == "/tmp") return PathStatus::Directory;
    return PathStatus::Missing;
  };
  CHECK(classify_source("https://host/img.zip", probe) == SourceKind::Url);
  CHECK(classify_source("http://host/img.zip", probe) == SourceKind::Url);
  CHECK(classify_source("ftp://host/img.xz", probe) == SourceKind::Url);
  CHECK(classify_source("/dev/sdc", probe) == SourceKind::BlockDevice);
  CHECK(classify_source("./base.img", probe) == SourceKind::LocalFile);
  CHECK(error_of([&] { classify_source("./nope.img", probe); }) == ErrorCode::SourceNotFound);
  CHECK(error_of([&] { classify_source("", probe); }) == ErrorCode::SourceNotFound);
  CHECK(error_of([&] { classify_source("/tmp", probe); }) == ErrorCode::SourceNotFound);
  // unknown schemes are just odd file names
  CHECK(error_of([&] { classify_source("sftp://host/x", probe); }) == ErrorCode::SourceNotFound);
  CHECK(url_scheme("https://x") == "https");
  CHECK_FALSE(url_scheme("https:/x"));
  CHECK_FALSE(url_scheme("http://"));
}

TEST_CASE("cache keys") {
  auto a = cache_key("https://example.org/a.img");
  auto b = cache_key("https://example.org/b.img");
  CHECK(a.size() == 64);
  CHECK(a != b);
  CHECK(a == cache_key("https://example.org/a.img"));
  if (auto ref = testing::shell("printf %s 'https://example.org/a.img' | sha256sum")) {
    CHECK(ref->substr(0, 64) == a);
  }
}

TEST_CASE("default cache dir") {
  CHECK(default_cache_dir("/w/x.Pifile", nullptr) == "/w/.pimod-cache");
  CHECK(default_cache_dir("/w/x.Pifile", "") == "/w/.pimod-cache");
  CHECK(default_cache_dir("/w/x.Pifile", "/var/cache/pi") == "/var/cache/pi");
}

TEST_CASE("fetch_to_cache fetches once") {
  TempDir dir;
  CountingFetcher fetcher;
  std::string url = "https://example.org/raspbian.img";
  fetcher.bodies[url] = pattern_bytes(100000, 1);

  auto first = fetch_to_cache(url, dir / "cache", fetcher);
  auto second = fetch_to_cache(url, dir / "cache", fetcher);
  CHECK(fetcher.calls == 1);
  CHECK(first == second);
  CHECK(first == dir / "cache" / cache_key(url) / "image");
  CHECK(testing::read_file(first) == fetcher.bodies[url]);

  auto entry = lookup_cache(url, dir / "cache");
  REQUIRE(entry);
  CHECK(entry->url == url);
  CHECK(entry->size == 100000);
  CHECK(entry->key == cache_key(url));
  auto meta = testing::read_file(dir / "cache" / cache_key(url) / "meta");
  CHECK(meta.find("url=" + url + "\n") != std::string::npos);
  CHECK(meta.find("size=100000\n") != std::string::npos);
  CHECK(meta.find("fetched_at=") != std::string::npos);

  fetch_to_cache(url, dir / "cache", fetcher, {.refresh = true});
  CHECK(fetcher.calls == 2);
  fetch_to_cache(url, dir / "cache", fetcher, {.offline = true});
  CHECK(fetcher.calls == 2);
}

TEST_CASE("failed fetch leaves no entry") {
  TempDir dir;
  CountingFetcher fetcher;
  std::string url = "https://example.org/broken.img";
  fetcher.bodies[url] = pattern_bytes(50000, 2);
  fetcher.fail_after = 1000;
  CHECK(error_of([&] { fetch_to_cache(url, dir / "cache", fetcher); }) == ErrorCode::FetchFailed);
  CHECK_FALSE(lookup_cache(url, dir / "cache"));
  CHECK_FALSE(fs::exists(dir / "cache" / cache_key(url)));
  for (const auto& e : fs::directory_iterator(dir / "cache")) {
    CAPTURE(e.path());
    CHECK(e.path().extension() == ".lock");
  }

  CHECK(error_of([&] { fetch_to_cache("https://example.org/404", dir / "cache", fetcher); }) ==
        ErrorCode::FetchFailed);
}

TEST_CASE("offline miss and unwritable cache") {
  TempDir dir;
  CountingFetcher fetcher;
  CHECK(error_of([&] {
          fetch_to_cache("https://x/y.img", dir / "cache", fetcher, {.offline = true});
        }) == ErrorCode::CacheMiss);
  CHECK(fetcher.calls == 0);

  testing::write_file(dir / "file", "x");
  CHECK(error_of([&] { fetch_to_cache("https://x/y.img", dir / "file" / "sub", fetcher); }) ==
        ErrorCode::CacheUnwritable);
}

TEST_CASE("extract_image on raw images") {
  TempDir dir;
  testing::write_file(dir / "base.img", pattern_bytes(4096, 3));
  CHECK(extract_image(dir / "base.img", dir / "ws") == dir / "base.img");
  CHECK_FALSE(fs::exists(dir / "ws"));
}

TEST_CASE("gzip and xz agree with the command line tools") {
  TempDir dir;
  auto payload = pattern_bytes(300000, 4) + std::string(200000, '\0');
  testing::write_file(dir / "base.img", payload);
  auto reference = sha256_file(dir / "base.img");

  struct Tool {
    const char* name;
    const char* suffix;
  };
  for (auto [tool, suffix] : {Tool{"gzip", ".gz"}, Tool{"xz", ".xz"}}) {
    CAPTURE(tool);
    if (!testing::have_tool(tool)) {
      MESSAGE(tool << " not installed");
      continue;
    }
    auto archive = dir / (std::string("base.img") + suffix);
    REQUIRE(testing::shell(std::string(tool) + " -c '" + (dir / "base.img").string() + "' > '" +
                           archive.string() + "'"));
    // oracle: the tool's own decompression
    auto back = testing::shell(std::string(tool) + " -dc '" + archive.string() + "' | sha256sum");
    REQUIRE(back);
    CHECK(back->substr(0, 64) == reference);

    auto out = extract_image(archive, dir / (std::string("ws-") + tool));
    CHECK(out.filename() == "base.img");
    CHECK(sha256_file(out) == reference);
    CHECK_FALSE(fs::exists(out.string() + ".part"));

    // sniffing works without a suffix
    auto bare = dir / (std::string("blob-") + tool);
    fs::copy_file(archive, bare);
    CHECK(detect_archive_format(bare) ==
          (std::string(tool) == "gzip" ? ArchiveFormat::Gzip : ArchiveFormat::Xz));
    CHECK(sha256_file(extract_image(bare, dir / (std::string("ws2-") + tool))) == reference);
  }
}

TEST_CASE("corrupt and truncated streams") {
  TempDir dir;
  testing::write_file(dir / "junk.gz", "\x1f\x8b this is not deflate data at all");
  CHECK(error_of([&] { extract_image(dir / "junk.gz", dir / "ws"); }) == ErrorCode::CorruptArchive);
  CHECK_FALSE(fs::exists(dir / "ws" / "junk"));
  CHECK_FALSE(fs::exists(dir / "ws" / "junk.part"));

  if (testing::have_tool("xz")) {
    testing::write_file(dir / "a.img", pattern_bytes(100000, 5));
    testing::shell("xz -c '" + (dir / "a.img").string() + "' > '" + (dir / "a.img.xz").string() + "'");
    auto full = testing::read_file(dir / "a.img.xz");
    testing::write_file(dir / "cut.img.xz", full.substr(0, full.size() / 2));
    CHECK(error_of([&] { extract_image(dir / "cut.img.xz", dir / "ws"); }) ==
          ErrorCode::CorruptArchive);
  }
  if (testing::have_tool("gzip")) {
    testing::write_file(dir / "b.img", pattern_bytes(100000, 6));
    testing::shell("gzip -c '" + (dir / "b.img").string() + "' > '" + (dir / "b.img.gz").string() + "'");
    auto full = testing::read_file(dir / "b.img.gz");
    testing::write_file(dir / "cut.img.gz", full.substr(0, full.size() - 20));
    CHECK(error_of([&] { extract_image(dir / "cut.img.gz", dir / "ws"); }) ==
          ErrorCode::CorruptArchive);
  }
}

TEST_CASE("unsupported formats") {
  TempDir dir;
  for (auto name : {"x.img.bz2", "x.7z", "x.tar", "x.rar", "x.lz4"}) {
    testing::write_file(dir / name, "whatever");
    CAPTURE(name);
    CHECK(error_of([&] { extract_image(dir / name, dir / "ws"); }) == ErrorCode::UnsupportedArchive);
  }
  testing::write_file(dir / "sniffed", "BZh91AY&SY");
  CHECK(error_of([&] { extract_image(dir / "sniffed", dir / "ws"); }) ==
        ErrorCode::UnsupportedArchive);
  if (testing::have_tool("gzip")) {
    testing::write_file(dir / "rootfs.tar", std::string(1024, 'x'));
    testing::shell("gzip -c '" + (dir / "rootfs.tar").string() + "' > '" +
                   (dir / "rootfs.tar.gz").string() + "'");
    CHECK(error_of([&] { extract_image(dir / "rootfs.tar.gz", dir / "ws"); }) ==
          ErrorCode::UnsupportedArchive);
  }
  CHECK(error_of([&] { extract_image(dir / "absent.gz", dir / "ws"); }) ==
        ErrorCode::SourceNotFound);
}

TEST_CASE("zip archives") {
  if (!has_python_zip()) {
    MESSAGE("python3 missing, zip fixtures unavailable");
    return;
  }
  TempDir dir;
  auto payload = pattern_bytes(200000, 7);
  testing::write_file(dir / "raspbian.img", payload);
  testing::write_file(dir / "README.txt", "read me");
  testing::write_file(dir / "other.img", "second");
  auto reference = sha256_file(dir / "raspbian.img");

  SUBCASE("deflated single image among other files") {
    make_zip(dir / "one.zip", {{"README.txt", dir / "README.txt"},
                               {"2020-02-13-raspbian.img", dir / "raspbian.img"}});
    auto out = extract_image(dir / "one.zip", dir / "ws");
    CHECK(out.filename() == "2020-02-13-raspbian.img");
    CHECK(sha256_file(out) == reference);
  }
  SUBCASE("stored member in a subdirectory") {
    make_zip(dir / "stored.zip", {{"images/raspbian.img", dir / "raspbian.img"}}, false);
    auto out = extract_image(dir / "stored.zip", dir / "ws");
    CHECK(out == dir / "ws" / "raspbian.img");
    CHECK(sha256_file(out) == reference);
  }
  SUBCASE("two images") {
    make_zip(dir / "two.zip", {{"a.img", dir / "raspbian.img"}, {"b.img", dir / "other.img"}});
    CHECK(error_of([&] { extract_image(dir / "two.zip", dir / "ws"); }) ==
          ErrorCode::MultipleImagesInArchive);
  }
  SUBCASE("damaged member") {
    make_zip(dir / "bad.zip", {{"a.img", dir / "raspbian.img"}}, false);
    auto bytes = testing::read_file(dir / "bad.zip");
    bytes[bytes.size() / 2] ^= 0x55;
    testing::write_file(dir / "bad.zip", bytes);
    CHECK(error_of([&] { extract_image(dir / "bad.zip", dir / "ws"); }) ==
          ErrorCode::CorruptArchive);
  }
  SUBCASE("not a zip at all") {
    testing::write_file(dir / "fake.zip", "PK\x03\x04 and then nothing useful");
    CHECK(error_of([&] { extract_image(dir / "fake.zip", dir / "ws"); }) ==
          ErrorCode::CorruptArchive);
  }
}

TEST_CASE("resolve_source_image for URLs records a fetch") {
  TempDir dir;
  CountingFetcher fetcher;
  std::string url = "https://example.org/img.bin";
  fetcher.bodies[url] = pattern_bytes(8192, 8);
  ExecutionPlan plan;
  plan.source = {SourceKind::Url, url, 2};
  SourceOptions opts{dir / "cache", &fetcher, {}};

  DryRunExecutor dry;
  auto a = resolve_source_image(plan, dry, opts);
  auto b = resolve_source_image(plan, dry, opts);
  CHECK(a == b);
  CHECK(fetcher.calls == 1);
  REQUIRE(dry.actions().size() == 2);
  CHECK(dry.actions()[0].kind == ActionKind::Fetch);
  CHECK(dry.actions()[0].at("url") == url);
  CHECK(dry.actions()[0] .at("path") == a.string());
}

TEST_CASE("resolve_source_image unpacks compressed downloads once") {
  if (!testing::have_tool("gzip")) return;
  TempDir dir;
  testing::write_file(dir / "base.img", pattern_bytes(70000, 9));
  testing::shell("gzip -c '" + (dir / "base.img").string() + "' > '" +
                 (dir / "base.img.gz").string() + "'");
  CountingFetcher fetcher;
  std::string url = "https://example.org/base.img.gz";
  fetcher.bodies[url] = testing::read_file(dir / "base.img.gz");
  ExecutionPlan plan;
  plan.source = {SourceKind::Url, url, 2};
  SourceOptions opts{dir / "cache", &fetcher, {}};
  DryRunExecutor dry;
  auto image = resolve_source_image(plan, dry, opts);
  CHECK(sha256_file(image) == sha256_file(dir / "base.img"));
  auto stamp = fs::last_write_time(image);
  CHECK(resolve_source_image(plan, dry, opts) == image);
  CHECK(fs::last_write_time(image) == stamp);
}

TEST_CASE("resolve_source_image for local files") {
  TempDir dir;
  testing::write_file(dir / "base.img", pattern_bytes(4096, 10));
  ExecutionPlan plan;
  plan.source = {SourceKind::LocalFile, (dir / "base.img").string(), 2};
  DryRunExecutor dry;
  CHECK(resolve_source_image(plan, dry, {dir / "cache", nullptr, {}}) == dir / "base.img");
  CHECK(dry.actions().empty());
  CHECK_FALSE(fs::exists(dir / "cache"));

  if (testing::have_tool("xz")) {
    testing::shell("xz -k '" + (dir / "base.img").string() + "'");
    plan.source.locator = (dir / "base.img.xz").string();
    auto out = resolve_source_image(plan, dry, {dir / "cache", nullptr, {}});
    CHECK(out.string().rfind((dir / "cache").string(), 0) == 0);
    CHECK(sha256_file(out) == sha256_file(dir / "base.img"));
  }
}

TEST_CASE("materialize_destination") {
  TempDir dir;
  testing::write_file(dir / "a.img", pattern_bytes(4096, 11));
  ExecutionPlan plan;
  plan.source = {SourceKind::LocalFile, (dir / "a.img").string(), 2};

  SUBCASE("copy") {
    plan.destination = {dir / "b.img", false};
    DryRunExecutor dry;
    CHECK(materialize_destination(plan, dir / "a.img", dry) == dir / "b.img");
    REQUIRE(dry.actions().size() == 1);
    CHECK(dry.actions()[0].kind == ActionKind::Copy);
  }
  SUBCASE("in place") {
    plan.inplace = true;
    plan.destination = {dir / "a.img", false};
    DryRunExecutor dry;
    CHECK(materialize_destination(plan, dir / "a.img", dry) == dir / "a.img");
    CHECK(dry.actions().empty());
  }
  SUBCASE("same path") {
    plan.destination = {dir / "." / "a.img", false};
    DryRunExecutor dry;
    materialize_destination(plan, dir / "a.img", dry);
    CHECK(dry.actions().empty());
  }
  SUBCASE("device") {
    plan.destination = {"/dev/sdc", true};
    DryRunExecutor dry;
    materialize_destination(plan, dir / "a.img", dry);
    REQUIRE(dry.actions().size() == 1);
    CHECK(dry.actions()[0].kind == ActionKind::DeviceWrite);
    CHECK(dry.actions()[0].at("device") == "/dev/sdc");
  }
  SUBCASE("directory") {
    fs::create_directories(dir / "outdir");
    plan.destination = {dir / "outdir", false};
    DryRunExecutor dry;
    CHECK(error_of([&] { materialize_destination(plan, dir / "a.img", dry); }) ==
          ErrorCode::DestinationIsDirectory);
  }
}
