#pragma once

#include <array>
#include <bitset>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fci::alt {

/// Per-segment Bloom filters over token ids, built once and then read-only.
class BloomSegmentIndex {
  public:
    static constexpr std::size_t kBits = 1024;
    static constexpr std::size_t kHashes = 3;
    static constexpr std::size_t kDefaultWidth = 16;

    BloomSegmentIndex() = default;
    BloomSegmentIndex(std::span<const std::uint16_t> tokens, std::size_t width);

    std::size_t width() const noexcept { return width_; }
    std::size_t length() const noexcept { return tokens_.size(); }
    std::size_t segment_count() const noexcept { return filters_.size(); }
    std::size_t segment_begin(std::size_t s) const { return s * width_; }
    std::size_t segment_end(std::size_t s) const;

    /// No false negatives; false positives at the usual (1 - e^{-kn/m})^k rate.
    bool may_contain(std::size_t segment, std::uint16_t token) const;
    std::uint16_t token_at(std::size_t pos) const { return tokens_[pos]; }

    /// Bit positions probed for `token`: h1 + i * h2 mod m, i < kHashes.
    static std::array<std::size_t, kHashes> probes(std::uint16_t token);

  private:
    std::size_t width_ = kDefaultWidth;
    std::vector<std::uint16_t> tokens_;
    std::vector<std::bitset<kBits>> filters_;
};

BloomSegmentIndex bloom_build(std::span<const std::uint16_t> tokens,
                              std::size_t width = BloomSegmentIndex::kDefaultWidth);

struct BloomRoute {
    std::vector<std::size_t> matched;   // exact matches, earliest first, at most k
    std::vector<std::size_t> selected;  // ascending
    std::size_t positive_segments = 0;
    std::size_t false_positive_segments = 0;
    bool padded = false;
};

/// Exact-match positions in filter-positive segments (excluding `exclude`),
/// each with its +1 neighbour, truncated earliest-first to 2k positions. Short
/// selections are padded to k with filter-positive segment starts, then with
/// the remaining segment starts.
BloomRoute bloom_route(const BloomSegmentIndex& index, std::uint16_t query_token, std::size_t k,
                       std::span<const std::size_t> exclude = {});

/// Expected false-positive rate (1 - e^{-k n / m})^k for n inserted items.
double bloom_false_positive_rate(std::size_t inserted);

}  // namespace fci::alt
