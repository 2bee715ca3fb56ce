#include "fci/dataset.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "json.hpp"

#include "fci/errors.hpp"

namespace fci::tasks {

namespace {

constexpr char kMagicStem[] = "FCIDATA";  // followed by one version digit
constexpr std::size_t kMagicLen = 8;

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, std::numeric_limits<uInt>::max()));
        crc = crc32(crc, data, chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

void put_u16(std::vector<std::uint8_t>& out, std::size_t v) {
    if (v > 0xFFFF) throw ConfigError("dataset value " + std::to_string(v) + " does not fit in 16 bits");
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

struct Reader {
    const std::vector<std::uint8_t>& b;
    std::size_t pos;
    std::size_t end;

    std::uint16_t u16() {
        if (pos + 2 > end) throw ParseError("dataset payload truncated");
        const auto v = static_cast<std::uint16_t>(b[pos] | (b[pos + 1] << 8));
        pos += 2;
        return v;
    }
};

DatasetHeader parse_header(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
        DatasetHeader h;
        h.format_version = j.at("format_version").get<std::uint32_t>();
        if (h.format_version != kDatasetFormatVersion)
            throw VersionError("dataset format version " + std::to_string(h.format_version) + ", expected " +
                               std::to_string(kDatasetFormatVersion));
        h.task = parse_task(j.at("task").get<std::string>());
        h.length = j.at("length").get<std::size_t>();
        h.count = j.at("count").get<std::size_t>();
        h.seed = j.at("seed").get<std::uint64_t>();
        return h;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("dataset header: ") + e.what(), 2);
    }
}

void check_magic(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kMagicStem, kMagicLen - 1) != 0)
        throw ParseError("not a dataset file (bad magic)");
    const char digit = static_cast<char>(bytes[kMagicLen - 1]);
    if (digit != char('0' + kDatasetFormatVersion))
        throw VersionError(std::string("dataset magic version '") + digit + "', expected '" +
                           char('0' + kDatasetFormatVersion) + "'");
}

std::size_t header_end(const std::vector<std::uint8_t>& bytes) {
    for (std::size_t i = kMagicLen; i < bytes.size(); ++i)
        if (bytes[i] == '\n') return i;
    throw ParseError("dataset header not terminated");
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open dataset file " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const SequenceBatch& batch) {
    std::vector<std::uint8_t> out(kMagicStem, kMagicStem + kMagicLen - 1);
    out.push_back(static_cast<std::uint8_t>('0' + kDatasetFormatVersion));
    nlohmann::json h;
    h["format_version"] = kDatasetFormatVersion;
    h["task"] = to_string(batch.kind);
    h["length"] = batch.length;
    h["count"] = batch.samples.size();
    h["seed"] = batch.seed;
    const auto header = h.dump();
    out.insert(out.end(), header.begin(), header.end());
    out.push_back('\n');
    for (const auto& s : batch.samples) {
        if (s.tokens.size() != batch.length) throw ContractError("encode_dataset: sample length differs from batch");
        put_u16(out, s.query_pos);
        put_u16(out, s.key_pos);
        put_u16(out, s.value);
        put_u16(out, s.distractors.size());
        for (auto p : s.distractors) put_u16(out, p);
        for (auto t : s.tokens) put_u16(out, t);
    }
    const auto crc = crc32_of(out.data(), out.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
    return out;
}

SequenceBatch decode_dataset(const std::vector<std::uint8_t>& bytes) {
    check_magic(bytes);
    if (bytes.size() < kMagicLen + 4) throw ParseError("dataset file truncated");
    const std::size_t body = bytes.size() - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= std::uint32_t(bytes[body + i]) << (8 * i);
    if (crc32_of(bytes.data(), body) != stored) throw ChecksumError("dataset checksum mismatch");

    const std::size_t nl = header_end(bytes);
    const auto h = parse_header(std::string(bytes.begin() + kMagicLen, bytes.begin() + long(nl)));
    SequenceBatch batch{h.task, h.length, h.seed, {}};
    Reader r{bytes, nl + 1, body};
    batch.samples.reserve(h.count);
    for (std::size_t i = 0; i < h.count; ++i) {
        Sample s;
        s.query_pos = r.u16();
        s.key_pos = r.u16();
        s.value = r.u16();
        const std::size_t nd = r.u16();
        for (std::size_t d = 0; d < nd; ++d) s.distractors.push_back(r.u16());
        s.tokens.resize(h.length);
        for (auto& t : s.tokens) t = r.u16();
        batch.samples.push_back(std::move(s));
    }
    if (r.pos != body) throw ParseError("dataset payload has trailing bytes");
    return batch;
}

void write_dataset(const SequenceBatch& batch, const std::filesystem::path& path) {
    const auto bytes = encode_dataset(batch);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write dataset file " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("short write to " + path.string());
}

SequenceBatch read_dataset(const std::filesystem::path& path) { return decode_dataset(slurp(path)); }

DatasetHeader read_dataset_header(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    check_magic(bytes);
    const std::size_t nl = header_end(bytes);
    return parse_header(std::string(bytes.begin() + kMagicLen, bytes.begin() + long(nl)));
}

}  // namespace fci::tasks
