#include "imgforge/image.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <vector>

#include "imgforge/action.hpp"
#include "imgforge/errors.hpp"
#include "imgforge/executor.hpp"
#include "imgforge/plan.hpp"

namespace imgforge {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kSuffixes = "kMGT";
constexpr std::uint8_t kGptProtective = 0xEE;
constexpr std::size_t kEntrySize = 16;

std::uint32_t load_le32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return std::uint32_t{bytes[offset]} | std::uint32_t{bytes[offset + 1]} << 8 |
         std::uint32_t{bytes[offset + 2]} << 16 | std::uint32_t{bytes[offset + 3]} << 24;
}

void store_le32(std::span<std::uint8_t> bytes, std::size_t offset, std::uint32_t value) {
  for (int i = 0; i < 4; ++i) bytes[offset + i] = static_cast<std::uint8_t>(value >> (8 * i));
}

PartitionEntry decode_entry(std::span<const std::uint8_t> sector0, int index) {
  auto base = kEntriesOffset + kEntrySize * static_cast<std::size_t>(index - 1);
  PartitionEntry e;
  e.index = index;
  e.bootable = sector0[base] == 0x80;
  e.type_code = sector0[base + 4];
  e.lba_start = load_le32(sector0, base + 8);
  e.lba_size = load_le32(sector0, base + 12);
  return e;
}

void check_sector(std::span<const std::uint8_t> sector0) {
  if (sector0.size() < kSectorSize) {
    throw Error(ErrorCode::ShortImage, "image is shorter than one sector (" +
                                           std::to_string(sector0.size()) + " bytes)");
  }
}

}  // namespace

ByteSize parse_size(std::string_view text) {
  auto malformed = [&] {
    return Error(ErrorCode::MalformedSize, "malformed size '" + std::string(text) + "'");
  };
  if (text.empty()) throw malformed();
  std::uint64_t multiplier = 1;
  auto digits = text;
  if (auto pos = kSuffixes.find(text.back()); pos != std::string_view::npos) {
    multiplier = std::uint64_t{1} << (10 * (pos + 1));
    digits.remove_suffix(1);
  }
  if (digits.empty()) throw malformed();
  std::uint64_t value = 0;
  for (char c : digits) {
    if (c < '0' || c > '9') throw malformed();
    auto digit = static_cast<std::uint64_t>(c - '0');
    if (value > (std::numeric_limits<std::uint64_t>::max() - digit) / 10) throw malformed();
    value = value * 10 + digit;
  }
  if (value != 0 && multiplier > std::numeric_limits<std::uint64_t>::max() / value) {
    throw malformed();
  }
  return ByteSize{value * multiplier};
}

std::string render_size(ByteSize size) {
  if (size.bytes == 0) return "0";
  auto value = size.bytes;
  int suffix = -1;
  while (suffix + 1 < static_cast<int>(kSuffixes.size()) && value % 1024 == 0) {
    value /= 1024;
    ++suffix;
  }
  auto text = std::to_string(value);
  if (suffix >= 0) text.push_back(kSuffixes[static_cast<std::size_t>(suffix)]);
  return text;
}

PartitionTable::PartitionTable() {
  for (int i = 0; i < 4; ++i) entries[static_cast<std::size_t>(i)].index = i + 1;
}

const PartitionEntry& PartitionTable::entry(int index) const {
  return entries.at(static_cast<std::size_t>(index - 1));
}

PartitionEntry& PartitionTable::entry(int index) {
  return entries.at(static_cast<std::size_t>(index - 1));
}

std::optional<int> PartitionTable::last_partition() const {
  std::optional<int> last;
  for (const auto& e : entries) {
    if (e.empty()) continue;
    if (!last || e.lba_start > entry(*last).lba_start) last = e.index;
  }
  return last;
}

void PartitionTable::validate() const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.index != static_cast<int>(i + 1)) {
      throw Error(ErrorCode::InvalidTable, "entry in slot " + std::to_string(i + 1) +
                                               " claims index " + std::to_string(e.index));
    }
    if ((e.lba_size == 0) != (e.type_code == 0)) {
      throw Error(ErrorCode::InvalidTable,
                  "partition " + std::to_string(e.index) + " has inconsistent type and size");
    }
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (std::size_t j = i + 1; j < entries.size(); ++j) {
      const auto& a = entries[i];
      const auto& b = entries[j];
      if (a.empty() || b.empty()) continue;
      if (a.lba_start < b.lba_end() && b.lba_start < a.lba_end()) {
        throw Error(ErrorCode::InvalidTable, "partitions " + std::to_string(a.index) + " and " +
                                                 std::to_string(b.index) + " overlap");
      }
    }
  }
}

PartitionTable decode_partition_table(std::span<const std::uint8_t> sector0) {
  check_sector(sector0);
  if (sector0[kSignatureOffset] != 0x55 || sector0[kSignatureOffset + 1] != 0xAA) {
    throw Error(ErrorCode::MissingBootSignature, "no MBR boot signature (55 AA) in sector 0");
  }
  PartitionTable table;
  table.disk_id = load_le32(sector0, kDiskIdOffset);
  for (int i = 1; i <= 4; ++i) {
    table.entry(i) = decode_entry(sector0, i);
    if (table.entry(i).type_code == kGptProtective) {
      throw Error(ErrorCode::UnsupportedGpt, "GPT partition tables are not supported");
    }
  }
  return table;
}

void encode_partition_table(std::span<std::uint8_t> sector0, const PartitionTable& table) {
  check_sector(sector0);
  table.validate();
  store_le32(sector0, kDiskIdOffset, table.disk_id);
  for (const auto& e : table.entries) {
    if (decode_entry(sector0, e.index) == e) continue;
    auto slot = sector0.subspan(kEntriesOffset + kEntrySize * static_cast<std::size_t>(e.index - 1),
                                kEntrySize);
    std::fill(slot.begin(), slot.end(), std::uint8_t{0});
    if (e.empty()) continue;
    slot[0] = e.bootable ? 0x80 : 0x00;
    slot[1] = 0xFE;
    slot[2] = 0xFF;
    slot[3] = 0xFF;
    slot[4] = e.type_code;
    slot[5] = 0xFE;
    slot[6] = 0xFF;
    slot[7] = 0xFF;
    store_le32(slot, 8, e.lba_start);
    store_le32(slot, 12, e.lba_size);
  }
}

PartitionTable read_partition_table(const fs::path& image) {
  std::ifstream in(image, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open image " + image.string());
  std::vector<std::uint8_t> sector(kSectorSize);
  in.read(reinterpret_cast<char*>(sector.data()), static_cast<std::streamsize>(sector.size()));
  sector.resize(static_cast<std::size_t>(in.gcount()));
  return decode_partition_table(sector);
}

void write_partition_table(const fs::path& image, const PartitionTable& table) {
  table.validate();
  std::fstream io(image, std::ios::binary | std::ios::in | std::ios::out);
  if (!io) throw Error(ErrorCode::IoFailure, "cannot open image " + image.string());
  std::vector<std::uint8_t> sector(kSectorSize);
  io.read(reinterpret_cast<char*>(sector.data()), static_cast<std::streamsize>(sector.size()));
  sector.resize(static_cast<std::size_t>(io.gcount()));
  encode_partition_table(sector, table);
  io.clear();
  io.seekp(0);
  io.write(reinterpret_cast<const char*>(sector.data()), static_cast<std::streamsize>(sector.size()));
  io.flush();
  if (!io) throw Error(ErrorCode::IoFailure, "failed to write partition table to " + image.string());
}

std::uint64_t grow_image_file(const fs::path& path, ByteSize extra) {
  std::error_code ec;
  auto status = fs::status(path, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot stat " + path.string() + ": " + ec.message());
  if (status.type() == fs::file_type::block) {
    throw Error(ErrorCode::IsBlockDevice, "refusing to grow block device " + path.string());
  }
  if (status.type() != fs::file_type::regular) {
    throw Error(ErrorCode::IoFailure, path.string() + " is not a regular file");
  }
  auto size = fs::file_size(path, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot size " + path.string() + ": " + ec.message());
  if (extra.bytes == 0) return size;
  fs::resize_file(path, size + extra.bytes, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot grow " + path.string() + ": " + ec.message());
  return size + extra.bytes;
}

PumpLayout plan_pump(const PartitionTable& table, std::uint64_t image_size, int partition_index,
                     std::uint64_t pump_bytes) {
  if (partition_index < 1 || partition_index > 4) {
    throw Error(ErrorCode::InvalidPartitionIndex,
                "partition " + std::to_string(partition_index) + " is not a primary MBR slot");
  }
  const auto& target = table.entry(partition_index);
  if (target.empty()) {
    throw Error(ErrorCode::EmptyPartitionSlot,
                "partition slot " + std::to_string(partition_index) + " is empty");
  }
  if (target.is_extended()) {
    throw Error(ErrorCode::ExtendedPartition,
                "partition " + std::to_string(partition_index) + " is an extended partition");
  }
  if (table.last_partition() != partition_index) {
    throw Error(ErrorCode::PartitionNotLast,
                "partition " + std::to_string(partition_index) +
                    " is followed by partition " + std::to_string(*table.last_partition()));
  }
  if (target.lba_end() * kSectorSize > image_size) {
    throw Error(ErrorCode::InvalidTable, "partition " + std::to_string(partition_index) +
                                             " extends beyond the end of the image");
  }

  PumpLayout layout;
  layout.grow_bytes = (pump_bytes + kSectorSize - 1) / kSectorSize * kSectorSize;
  layout.table = table;
  auto grown = std::uint64_t{target.lba_size} + layout.grow_bytes / kSectorSize;
  if (target.lba_start + grown > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::InvalidTable, "grown partition exceeds the MBR addressing limit");
  }
  layout.table.entry(partition_index).lba_size = static_cast<std::uint32_t>(grown);
  return layout;
}

void pump(const ExecutionPlan& plan, Executor& executor) {
  if (plan.pump_bytes == 0) return;
  const auto& image = plan.destination.path;
  if (plan.destination.is_device) {
    throw Error(ErrorCode::IsBlockDevice, "cannot PUMP block device " + image.string());
  }
  auto table = executor.read_partition_table(image);
  auto layout = plan_pump(table, executor.image_size(image), plan.partition_index, plan.pump_bytes);
  const auto& grown = layout.table.entry(plan.partition_index);

  executor.require(actions::grow(image, layout.grow_bytes));
  executor.require(actions::table_write(image, grown));
  executor.require(actions::fs_resize(image, grown));
}

}  // namespace imgforge
