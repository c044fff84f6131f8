#pragma once

#include <filesystem>

namespace imgforge {

enum class ArchiveFormat { Raw, Zip, Gzip, Xz, Zstd };

/// By suffix first, then by magic bytes. Throws UnsupportedArchive for
/// recognized but unhandled formats (bzip2, 7z, tar, ...).
ArchiveFormat detect_archive_format(const std::filesystem::path& file);

}  // namespace imgforge
