#include "fci/alt/bloom.hpp"

#include <algorithm>
#include <cmath>

#include "fci/errors.hpp"

namespace fci::alt {

namespace {

constexpr std::uint64_t kSeedA = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kSeedB = 0xc2b2ae3d27d4eb4fULL;

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::array<std::size_t, BloomSegmentIndex::kHashes> BloomSegmentIndex::probes(std::uint16_t token) {
    const std::uint64_t h1 = mix64(token ^ kSeedA);
    const std::uint64_t h2 = mix64(token ^ kSeedB) | 1ULL;
    std::array<std::size_t, kHashes> out{};
    for (std::size_t i = 0; i < kHashes; ++i) out[i] = static_cast<std::size_t>((h1 + i * h2) % kBits);
    return out;
}

BloomSegmentIndex::BloomSegmentIndex(std::span<const std::uint16_t> tokens, std::size_t width)
    : width_(width), tokens_(tokens.begin(), tokens.end()) {
    if (width == 0) throw ConfigError("bloom_build: segment width must be >= 1");
    const std::size_t n_seg = (tokens.size() + width - 1) / width;
    filters_.resize(n_seg);
    for (std::size_t p = 0; p < tokens.size(); ++p) {
        for (auto bit : probes(tokens[p])) filters_[p / width].set(bit);
    }
}

std::size_t BloomSegmentIndex::segment_end(std::size_t s) const {
    return std::min(tokens_.size(), (s + 1) * width_);
}

bool BloomSegmentIndex::may_contain(std::size_t segment, std::uint16_t token) const {
    const auto& f = filters_.at(segment);
    for (auto bit : probes(token))
        if (!f.test(bit)) return false;
    return true;
}

BloomSegmentIndex bloom_build(std::span<const std::uint16_t> tokens, std::size_t width) {
    return BloomSegmentIndex(tokens, width);
}

BloomRoute bloom_route(const BloomSegmentIndex& index, std::uint16_t query_token, std::size_t k,
                       std::span<const std::size_t> exclude) {
    if (k == 0) throw ConfigError("bloom_route: k must be >= 1");
    BloomRoute route;
    const std::size_t len = index.length();
    std::vector<std::size_t> positive;
    for (std::size_t s = 0; s < index.segment_count(); ++s) {
        if (!index.may_contain(s, query_token)) continue;
        positive.push_back(s);
        bool hit = false;
        for (std::size_t p = index.segment_begin(s); p < index.segment_end(s); ++p) {
            if (index.token_at(p) != query_token) continue;
            hit = true;
            if (std::find(exclude.begin(), exclude.end(), p) != exclude.end()) continue;
            if (route.matched.size() < k) route.matched.push_back(p);
        }
        if (!hit) ++route.false_positive_segments;
    }
    route.positive_segments = positive.size();

    std::vector<std::size_t> chosen;
    for (auto p : route.matched) {
        for (std::size_t c : {p, p + 1}) {
            if (c >= len || chosen.size() >= 2 * k) continue;
            if (std::find(chosen.begin(), chosen.end(), c) == chosen.end()) chosen.push_back(c);
        }
    }
    auto pad_from = [&](auto&& segments) {
        for (auto s : segments) {
            if (chosen.size() >= k) return;
            const std::size_t start = index.segment_begin(s);
            if (std::find(chosen.begin(), chosen.end(), start) != chosen.end()) continue;
            if (std::find(exclude.begin(), exclude.end(), start) != exclude.end()) continue;
            chosen.push_back(start);
            route.padded = true;
        }
    };
    pad_from(positive);
    std::vector<std::size_t> all(index.segment_count());
    for (std::size_t s = 0; s < all.size(); ++s) all[s] = s;
    pad_from(all);
    std::sort(chosen.begin(), chosen.end());
    route.selected = std::move(chosen);
    return route;
}

double bloom_false_positive_rate(std::size_t inserted) {
    const double k = BloomSegmentIndex::kHashes, m = BloomSegmentIndex::kBits;
    return std::pow(1.0 - std::exp(-k * static_cast<double>(inserted) / m), k);
}

}  // namespace fci::alt
