#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fci::tasks {

using Terms = std::vector<std::string>;

/// Lowercase and split on non-alphanumerics; empty pieces are dropped.
Terms tokenize(const std::string& text);

struct CorpusItem {
    std::string id;
    Terms query;
    std::vector<Terms> segments;
    std::vector<std::size_t> gold;  // ascending, each < segments.size()

    bool operator==(const CorpusItem&) const = default;
};

struct SegmentedCorpus {
    std::vector<CorpusItem> items;

    std::size_t size() const noexcept { return items.size(); }
    void validate() const;  // ValidationError
    bool operator==(const SegmentedCorpus&) const = default;
};

/// One JSON object per line:
///   {"id": "...", "query": [term, ...], "segments": [[term, ...], ...], "gold": [i, ...]}
/// A plain string is accepted wherever a term list is. Terms are re-tokenized
/// on load. Blank lines are skipped; a file without items is a ParseError.
SegmentedCorpus parse_segmented_corpus(const std::string& text);
SegmentedCorpus load_segmented_corpus(const std::filesystem::path& path);

/// load(serialize(c)) == c for any corpus whose terms are already tokenized.
std::string serialize_segmented_corpus(const SegmentedCorpus& corpus);
void save_segmented_corpus(const SegmentedCorpus& corpus, const std::filesystem::path& path);

struct SyntheticCorpusConfig {
    std::size_t items = 200;
    std::size_t segments = 16;
    std::size_t gold = 2;
    std::size_t query_terms = 4;
    std::size_t segment_terms = 12;
    /// Non-gold segments that share exactly one query term.
    std::size_t hard_negatives = 3;

    void validate() const;
};

/// Gold segments contain at least half of the query terms; other segments are
/// drawn from a shared filler lexicon.
SegmentedCorpus gen_synthetic_corpus(const SyntheticCorpusConfig& cfg, std::uint64_t seed);

}  // namespace fci::tasks
