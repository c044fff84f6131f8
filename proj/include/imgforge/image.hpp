#pragma once

// Raw image handling: MBR partition tables, file growth and the PUMP
// sequence. Sector 0 layout: disk id at 440, four 16-byte entries at 446,
// boot signature 55 AA at 510.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace imgforge {

struct ExecutionPlan;
class Executor;

inline constexpr std::uint64_t kSectorSize = 512;

struct ByteSize {
  std::uint64_t bytes = 0;
  auto operator<=>(const ByteSize&) const = default;
};

/// `<digits>[k|M|G|T]`, binary multipliers, case-sensitive suffix.
ByteSize parse_size(std::string_view text);

/// Shortest exact rendering using the largest suffix that divides evenly.
std::string render_size(ByteSize size);

struct PartitionEntry {
  int index = 0;  // 1..4
  bool bootable = false;
  std::uint8_t type_code = 0;
  std::uint32_t lba_start = 0;
  std::uint32_t lba_size = 0;

  bool empty() const { return lba_size == 0; }
  std::uint64_t lba_end() const { return std::uint64_t{lba_start} + lba_size; }
  bool is_extended() const { return type_code == 0x05 || type_code == 0x0F || type_code == 0x85; }

  bool operator==(const PartitionEntry&) const = default;
};

struct PartitionTable {
  std::uint32_t disk_id = 0;
  std::array<PartitionEntry, 4> entries{};

  static constexpr std::uint64_t sector_size = kSectorSize;

  PartitionTable();

  /// 1-based slot access.
  const PartitionEntry& entry(int index) const;
  PartitionEntry& entry(int index);

  /// Occupied slot with the highest start sector, if any.
  std::optional<int> last_partition() const;

  /// Throws InvalidTable on overlap or on a size/type mismatch.
  void validate() const;

  bool operator==(const PartitionTable&) const = default;
};

inline constexpr std::size_t kDiskIdOffset = 440;
inline constexpr std::size_t kEntriesOffset = 446;
inline constexpr std::size_t kSignatureOffset = 510;

/// Decodes sector 0. Throws ShortImage, MissingBootSignature or
/// UnsupportedGpt (protective MBR).
PartitionTable decode_partition_table(std::span<const std::uint8_t> sector0);

/// Rewrites the table area of `sector0` in place. Entries whose decoded
/// value changes get saturated CHS fields; everything else is untouched.
void encode_partition_table(std::span<std::uint8_t> sector0, const PartitionTable& table);

PartitionTable read_partition_table(const std::filesystem::path& image);
void write_partition_table(const std::filesystem::path& image, const PartitionTable& table);

/// Appends `extra` zero bytes. Returns the new length.
std::uint64_t grow_image_file(const std::filesystem::path& path, ByteSize extra);

/// Pure part of PUMP: the grown table and the sector-rounded byte count.
struct PumpLayout {
  std::uint64_t grow_bytes = 0;
  PartitionTable table;
};

PumpLayout plan_pump(const PartitionTable& table, std::uint64_t image_size, int partition_index,
                     std::uint64_t pump_bytes);

/// Grows the destination image, enlarges the target partition entry and
/// asks for a filesystem resize, all as executor actions.
void pump(const ExecutionPlan& plan, Executor& executor);

}  // namespace imgforge
