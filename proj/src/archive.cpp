#include "imgforge/archive.hpp"

#include <lzma.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#ifdef IMGFORGE_HAVE_ZSTD
#include <zstd.h>
#endif

#include "imgforge/errors.hpp"
#include "imgforge/source.hpp"

namespace imgforge {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kChunk = 1 << 16;

std::string lower_extension(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

Error corrupt(const fs::path& archive, const std::string& why) {
  return Error(ErrorCode::CorruptArchive, archive.string() + ": " + why);
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  return out;
}

void finish_output(std::ofstream& out, const fs::path& partial, const fs::path& final_path) {
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "failed writing " + partial.string());
  fs::rename(partial, final_path);
}

// Output name for single-stream formats: the archive name minus its suffix.
fs::path stream_output_name(const fs::path& archive) {
  auto ext = lower_extension(archive);
  auto name = (ext == ".gz" || ext == ".xz" || ext == ".zst") ? archive.stem() : archive.filename();
  if (lower_extension(name) == ".tar") {
    throw Error(ErrorCode::UnsupportedArchive, archive.string() + ": tar archives are not supported");
  }
  return name;
}

void gunzip(const fs::path& archive, const fs::path& output) {
  std::unique_ptr<gzFile_s, decltype(&gzclose)> in(gzopen(archive.c_str(), "rb"), &gzclose);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + archive.string());
  auto out = open_output(output);
  std::vector<char> buffer(kChunk);
  while (true) {
    int n = gzread(in.get(), buffer.data(), static_cast<unsigned>(buffer.size()));
    if (n < 0) {
      int code = 0;
      throw corrupt(archive, gzerror(in.get(), &code));
    }
    if (n == 0) break;
    out.write(buffer.data(), n);
  }
  // gzread treats a truncated trailer as EOF; gzclose reports it.
  auto* raw = in.release();
  if (gzclose(raw) != Z_OK) throw corrupt(archive, "truncated gzip stream");
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "failed writing " + output.string());
}

void unxz(const fs::path& archive, const fs::path& output) {
  std::ifstream in(archive, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + archive.string());
  lzma_stream strm = LZMA_STREAM_INIT;
  if (lzma_stream_decoder(&strm, UINT64_MAX, LZMA_CONCATENATED) != LZMA_OK) {
    throw Error(ErrorCode::IoFailure, "cannot initialize xz decoder");
  }
  std::unique_ptr<lzma_stream, decltype(&lzma_end)> guard(&strm, &lzma_end);
  auto out = open_output(output);
  std::vector<std::uint8_t> inbuf(kChunk), outbuf(kChunk);
  lzma_action action = LZMA_RUN;
  while (true) {
    if (strm.avail_in == 0 && action == LZMA_RUN) {
      in.read(reinterpret_cast<char*>(inbuf.data()), static_cast<std::streamsize>(inbuf.size()));
      strm.next_in = inbuf.data();
      strm.avail_in = static_cast<std::size_t>(in.gcount());
      if (!in) action = LZMA_FINISH;
    }
    strm.next_out = outbuf.data();
    strm.avail_out = outbuf.size();
    auto ret = lzma_code(&strm, action);
    out.write(reinterpret_cast<const char*>(outbuf.data()),
              static_cast<std::streamsize>(outbuf.size() - strm.avail_out));
    if (ret == LZMA_STREAM_END) break;
    if (ret != LZMA_OK) throw corrupt(archive, "xz stream error " + std::to_string(ret));
  }
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "failed writing " + output.string());
}

void unzstd([[maybe_unused]] const fs::path& archive, [[maybe_unused]] const fs::path& output) {
#ifdef IMGFORGE_HAVE_ZSTD
  std::ifstream in(archive, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + archive.string());
  std::unique_ptr<ZSTD_DStream, decltype(&ZSTD_freeDStream)> ds(ZSTD_createDStream(),
                                                                &ZSTD_freeDStream);
  ZSTD_initDStream(ds.get());
  auto out = open_output(output);
  std::vector<char> inbuf(ZSTD_DStreamInSize()), outbuf(ZSTD_DStreamOutSize());
  std::size_t last = 0;
  while (in) {
    in.read(inbuf.data(), static_cast<std::streamsize>(inbuf.size()));
    ZSTD_inBuffer input{inbuf.data(), static_cast<std::size_t>(in.gcount()), 0};
    while (input.pos < input.size) {
      ZSTD_outBuffer o{outbuf.data(), outbuf.size(), 0};
      last = ZSTD_decompressStream(ds.get(), &o, &input);
      if (ZSTD_isError(last)) throw corrupt(archive, ZSTD_getErrorName(last));
      out.write(outbuf.data(), static_cast<std::streamsize>(o.pos));
    }
  }
  if (last != 0) throw corrupt(archive, "truncated zstd stream");
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "failed writing " + output.string());
#else
  throw Error(ErrorCode::UnsupportedArchive,
              archive.string() + ": this build has no zstd support");
#endif
}

// Minimal ZIP reader: central directory (with ZIP64 extensions), stored and
// deflated members.
class ZipReader {
 public:
  struct Member {
    std::string name;
    std::uint16_t method = 0;
    std::uint32_t crc = 0;
    std::uint64_t compressed = 0;
    std::uint64_t uncompressed = 0;
    std::uint64_t header_offset = 0;
  };

  explicit ZipReader(fs::path archive) : path_(std::move(archive)), in_(path_, std::ios::binary) {
    if (!in_) throw Error(ErrorCode::IoFailure, "cannot open " + path_.string());
    in_.seekg(0, std::ios::end);
    size_ = static_cast<std::uint64_t>(in_.tellg());
    read_directory();
  }

  const std::vector<Member>& members() const { return members_; }

  void extract(const Member& m, const fs::path& output) {
    auto header = read_at(m.header_offset, 30);
    if (le32(header, 0) != 0x04034b50) throw corrupt(path_, "bad local header for " + m.name);
    auto data = m.header_offset + 30 + le16(header, 26) + le16(header, 28);
    if (data + m.compressed > size_) throw corrupt(path_, "member " + m.name + " is truncated");
    in_.seekg(static_cast<std::streamoff>(data));

    auto out = open_output(output);
    uLong crc = crc32(0L, Z_NULL, 0);
    std::uint64_t written = 0;
    std::vector<char> inbuf(kChunk), outbuf(kChunk);
    auto emit = [&](const char* bytes, std::size_t n) {
      crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes), static_cast<uInt>(n));
      out.write(bytes, static_cast<std::streamsize>(n));
      written += n;
    };

    std::uint64_t remaining = m.compressed;
    if (m.method == 0) {
      while (remaining > 0) {
        auto n = std::min<std::uint64_t>(remaining, inbuf.size());
        in_.read(inbuf.data(), static_cast<std::streamsize>(n));
        emit(inbuf.data(), n);
        remaining -= n;
      }
    } else if (m.method == 8) {
      z_stream zs{};
      if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw Error(ErrorCode::IoFailure, "inflateInit2");
      std::unique_ptr<z_stream, decltype(&inflateEnd)> guard(&zs, &inflateEnd);
      int ret = Z_OK;
      while (ret != Z_STREAM_END) {
        if (zs.avail_in == 0) {
          if (remaining == 0) throw corrupt(path_, "deflate stream of " + m.name + " is truncated");
          auto n = std::min<std::uint64_t>(remaining, inbuf.size());
          in_.read(inbuf.data(), static_cast<std::streamsize>(n));
          remaining -= n;
          zs.next_in = reinterpret_cast<Bytef*>(inbuf.data());
          zs.avail_in = static_cast<uInt>(n);
        }
        zs.next_out = reinterpret_cast<Bytef*>(outbuf.data());
        zs.avail_out = static_cast<uInt>(outbuf.size());
        ret = inflate(&zs, Z_NO_FLUSH);
        if (ret != Z_OK && ret != Z_STREAM_END) {
          throw corrupt(path_, "deflate error in " + m.name);
        }
        emit(outbuf.data(), outbuf.size() - zs.avail_out);
      }
    } else {
      throw Error(ErrorCode::UnsupportedArchive,
                  path_.string() + ": compression method " + std::to_string(m.method) +
                      " of " + m.name + " is not supported");
    }
    if (written != m.uncompressed || crc != m.crc) {
      throw corrupt(path_, "checksum mismatch in " + m.name);
    }
    out.close();
    if (!out) throw Error(ErrorCode::IoFailure, "failed writing " + output.string());
  }

 private:
  static std::uint16_t le16(const std::vector<std::uint8_t>& b, std::size_t o) {
    return static_cast<std::uint16_t>(b.at(o) | b.at(o + 1) << 8);
  }
  static std::uint32_t le32(const std::vector<std::uint8_t>& b, std::size_t o) {
    return std::uint32_t{le16(b, o)} | std::uint32_t{le16(b, o + 2)} << 16;
  }
  static std::uint64_t le64(const std::vector<std::uint8_t>& b, std::size_t o) {
    return std::uint64_t{le32(b, o)} | std::uint64_t{le32(b, o + 4)} << 32;
  }

  std::vector<std::uint8_t> read_at(std::uint64_t offset, std::size_t n) {
    if (offset + n > size_) throw corrupt(path_, "unexpected end of file");
    std::vector<std::uint8_t> buf(n);
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(offset));
    in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (!in_) throw corrupt(path_, "read error");
    return buf;
  }

  void read_directory() {
    if (size_ < 22) throw corrupt(path_, "too small for a zip archive");
    auto tail_len = static_cast<std::size_t>(std::min<std::uint64_t>(size_, 22 + 0xFFFF));
    auto tail_start = size_ - tail_len;
    auto tail = read_at(tail_start, tail_len);
    std::optional<std::size_t> eocd;
    for (std::size_t i = tail_len - 22 + 1; i-- > 0;) {
      if (le32(tail, i) == 0x06054b50) {
        eocd = i;
        break;
      }
    }
    if (!eocd) throw corrupt(path_, "no end of central directory record");

    std::uint64_t count = le16(tail, *eocd + 10);
    std::uint64_t dir_size = le32(tail, *eocd + 12);
    std::uint64_t dir_offset = le32(tail, *eocd + 16);
    if (count == 0xFFFF || dir_size == 0xFFFFFFFF || dir_offset == 0xFFFFFFFF) {
      if (*eocd < 20 || le32(tail, *eocd - 20) != 0x07064b50) {
        throw corrupt(path_, "missing ZIP64 locator");
      }
      auto record = read_at(le64(tail, *eocd - 20 + 8), 56);
      if (le32(record, 0) != 0x06064b50) throw corrupt(path_, "bad ZIP64 directory record");
      count = le64(record, 32);
      dir_size = le64(record, 40);
      dir_offset = le64(record, 48);
    }

    auto dir = read_at(dir_offset, static_cast<std::size_t>(dir_size));
    std::size_t pos = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
      if (pos + 46 > dir.size() || le32(dir, pos) != 0x02014b50) {
        throw corrupt(path_, "bad central directory entry");
      }
      Member m;
      m.method = le16(dir, pos + 10);
      m.crc = le32(dir, pos + 16);
      m.compressed = le32(dir, pos + 20);
      m.uncompressed = le32(dir, pos + 24);
      auto name_len = le16(dir, pos + 28);
      auto extra_len = le16(dir, pos + 30);
      auto comment_len = le16(dir, pos + 32);
      m.header_offset = le32(dir, pos + 42);
      if (pos + 46 + name_len + extra_len > dir.size()) throw corrupt(path_, "truncated entry");
      m.name.assign(reinterpret_cast<const char*>(dir.data() + pos + 46), name_len);

      auto extra = pos + 46 + name_len;
      auto extra_end = extra + extra_len;
      while (extra + 4 <= extra_end) {
        auto id = le16(dir, extra);
        auto len = le16(dir, extra + 2);
        if (id == 0x0001) {
          auto field = extra + 4;
          if (m.uncompressed == 0xFFFFFFFF) { m.uncompressed = le64(dir, field); field += 8; }
          if (m.compressed == 0xFFFFFFFF) { m.compressed = le64(dir, field); field += 8; }
          if (m.header_offset == 0xFFFFFFFF) { m.header_offset = le64(dir, field); }
        }
        extra += 4 + len;
      }
      members_.push_back(std::move(m));
      pos += 46 + name_len + extra_len + comment_len;
    }
  }

  fs::path path_;
  std::ifstream in_;
  std::uint64_t size_ = 0;
  std::vector<Member> members_;
};

fs::path extract_zip(const fs::path& archive, const fs::path& workspace) {
  ZipReader zip(archive);
  std::vector<const ZipReader::Member*> files;
  std::vector<const ZipReader::Member*> images;
  for (const auto& m : zip.members()) {
    if (m.name.empty() || m.name.back() == '/') continue;
    files.push_back(&m);
    if (lower_extension(m.name) == ".img") images.push_back(&m);
  }
  const auto& candidates = images.empty() ? files : images;
  if (candidates.size() > 1) {
    throw Error(ErrorCode::MultipleImagesInArchive,
                archive.string() + " contains " + std::to_string(candidates.size()) +
                    " images; only single-image archives are supported");
  }
  if (candidates.empty()) throw corrupt(archive, "archive contains no files");

  const auto& member = *candidates.front();
  auto name = fs::path(member.name).filename();
  if (name.empty() || name == "." || name == "..") throw corrupt(archive, "bad member name");
  auto output = workspace / name;
  auto partial = workspace / (name.string() + ".part");
  zip.extract(member, partial);
  fs::rename(partial, output);
  return output;
}

}  // namespace

ArchiveFormat detect_archive_format(const fs::path& file) {
  auto ext = lower_extension(file);
  if (ext == ".zip") return ArchiveFormat::Zip;
  if (ext == ".gz") return ArchiveFormat::Gzip;
  if (ext == ".xz") return ArchiveFormat::Xz;
  if (ext == ".zst") return ArchiveFormat::Zstd;
  if (ext == ".bz2" || ext == ".7z" || ext == ".tar" || ext == ".rar" || ext == ".lz4") {
    throw Error(ErrorCode::UnsupportedArchive, file.string() + ": unsupported archive format");
  }
  if (ext == ".img" || ext == ".iso" || ext == ".raw") return ArchiveFormat::Raw;

  std::ifstream in(file, std::ios::binary);
  std::array<unsigned char, 6> magic{};
  in.read(reinterpret_cast<char*>(magic.data()), magic.size());
  auto n = in.gcount();
  auto starts = [&](std::initializer_list<unsigned char> sig) {
    return n >= static_cast<std::streamsize>(sig.size()) &&
           std::equal(sig.begin(), sig.end(), magic.begin());
  };
  if (starts({0x50, 0x4B, 0x03, 0x04})) return ArchiveFormat::Zip;
  if (starts({0x1F, 0x8B})) return ArchiveFormat::Gzip;
  if (starts({0xFD, 0x37, 0x7A, 0x58, 0x5A, 0x00})) return ArchiveFormat::Xz;
  if (starts({0x28, 0xB5, 0x2F, 0xFD})) return ArchiveFormat::Zstd;
  if (starts({'B', 'Z', 'h'}) || starts({'7', 'z', 0xBC, 0xAF, 0x27, 0x1C})) {
    throw Error(ErrorCode::UnsupportedArchive, file.string() + ": unsupported archive format");
  }
  return ArchiveFormat::Raw;
}

fs::path extract_image(const fs::path& archive, const fs::path& workspace) {
  std::error_code ec;
  if (!fs::is_regular_file(archive, ec)) {
    throw Error(ErrorCode::SourceNotFound, "archive " + archive.string() + " not found");
  }
  auto format = detect_archive_format(archive);
  if (format == ArchiveFormat::Raw) return archive;

  fs::create_directories(workspace, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + workspace.string());
  if (format == ArchiveFormat::Zip) return extract_zip(archive, workspace);

  auto name = stream_output_name(archive);
  auto output = workspace / name;
  auto partial = workspace / (name.string() + ".part");
  try {
    switch (format) {
      case ArchiveFormat::Gzip: gunzip(archive, partial); break;
      case ArchiveFormat::Xz: unxz(archive, partial); break;
      case ArchiveFormat::Zstd: unzstd(archive, partial); break;
      default: break;
    }
  } catch (...) {
    fs::remove(partial, ec);
    throw;
  }
  fs::rename(partial, output);
  return output;
}

}  // namespace imgforge
