#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fci/tasks.hpp"

namespace fci::tasks {

constexpr std::uint32_t kDatasetFormatVersion = 1;

/// Layout: "FCIDATA1", one JSON header line, little-endian u16 rows
/// (q, a, value, n_distractors, distractors..., tokens...), then a CRC32
/// (LE u32) of every preceding byte.
std::vector<std::uint8_t> encode_dataset(const SequenceBatch& batch);

/// Throws VersionError for another format version, ChecksumError on CRC
/// mismatch, ParseError for structural damage.
SequenceBatch decode_dataset(const std::vector<std::uint8_t>& bytes);

void write_dataset(const SequenceBatch& batch, const std::filesystem::path& path);
SequenceBatch read_dataset(const std::filesystem::path& path);

/// Header fields without decoding the payload.
struct DatasetHeader {
    std::uint32_t format_version = 0;
    TaskKind task = TaskKind::distant;
    std::size_t length = 0;
    std::size_t count = 0;
    std::uint64_t seed = 0;
};
DatasetHeader read_dataset_header(const std::filesystem::path& path);

}  // namespace fci::tasks
