#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace fci::alt {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Okapi BM25 statistics over a fixed list of segments.
class Bm25Index {
  public:
    Bm25Index(const std::vector<std::vector<std::string>>& segments, Bm25Params params = {});

    std::size_t segment_count() const noexcept { return lengths_.size(); }
    std::size_t length(std::size_t s) const { return lengths_.at(s); }
    double average_length() const noexcept { return avg_len_; }
    std::size_t document_frequency(const std::string& term) const;
    std::size_t term_frequency(std::size_t s, const std::string& term) const;

    /// ln(1 + (N - df + 0.5) / (df + 0.5))
    double idf(const std::string& term) const;
    /// Sum over the query multiset of idf * tf (k1 + 1) / (tf + k1 (1 - b + b len / avglen)).
    double score(const std::vector<std::string>& query, std::size_t s) const;

  private:
    Bm25Params params_;
    std::vector<std::unordered_map<std::string, std::size_t>> tf_;
    std::unordered_map<std::string, std::size_t> df_;
    std::vector<std::size_t> lengths_;
    double avg_len_ = 1.0;
};

Bm25Index bm25_build(const std::vector<std::vector<std::string>>& segments, Bm25Params params = {});

/// Top `top_m` segments by score, descending, ties to the lower id.
std::vector<std::pair<std::size_t, double>> bm25_retrieve(const Bm25Index& index,
                                                          const std::vector<std::string>& query,
                                                          std::size_t top_m);

}  // namespace fci::alt
