#include "fci/alt/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fci/errors.hpp"

namespace fci::alt {

Bm25Index::Bm25Index(const std::vector<std::vector<std::string>>& segments, Bm25Params params)
    : params_(params) {
    if (segments.empty()) throw ContractError("bm25_build: empty corpus");
    tf_.resize(segments.size());
    lengths_.resize(segments.size());
    for (std::size_t s = 0; s < segments.size(); ++s) {
        for (const auto& t : segments[s]) ++tf_[s][t];
        for (const auto& [t, _] : tf_[s]) ++df_[t];
        lengths_[s] = segments[s].size();
    }
    const double total = std::accumulate(lengths_.begin(), lengths_.end(), 0.0);
    avg_len_ = total > 0 ? total / static_cast<double>(lengths_.size()) : 1.0;
}

std::size_t Bm25Index::document_frequency(const std::string& term) const {
    auto it = df_.find(term);
    return it == df_.end() ? 0 : it->second;
}

std::size_t Bm25Index::term_frequency(std::size_t s, const std::string& term) const {
    const auto& m = tf_.at(s);
    auto it = m.find(term);
    return it == m.end() ? 0 : it->second;
}

double Bm25Index::idf(const std::string& term) const {
    const double n = static_cast<double>(segment_count());
    const double df = static_cast<double>(document_frequency(term));
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double Bm25Index::score(const std::vector<std::string>& query, std::size_t s) const {
    // an empty segment normalises as length 1
    const double len = static_cast<double>(std::max<std::size_t>(lengths_.at(s), 1));
    const double norm = params_.k1 * (1.0 - params_.b + params_.b * len / avg_len_);
    double total = 0;
    for (const auto& t : query) {
        const double tf = static_cast<double>(term_frequency(s, t));
        if (tf == 0) continue;
        total += idf(t) * tf * (params_.k1 + 1.0) / (tf + norm);
    }
    return total;
}

Bm25Index bm25_build(const std::vector<std::vector<std::string>>& segments, Bm25Params params) {
    return Bm25Index(segments, params);
}

std::vector<std::pair<std::size_t, double>> bm25_retrieve(const Bm25Index& index,
                                                          const std::vector<std::string>& query,
                                                          std::size_t top_m) {
    if (top_m == 0) throw ContractError("bm25_retrieve: top_m must be >= 1");
    std::vector<std::pair<std::size_t, double>> ranked(index.segment_count());
    for (std::size_t s = 0; s < ranked.size(); ++s) ranked[s] = {s, index.score(query, s)};
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    ranked.resize(std::min(top_m, ranked.size()));
    return ranked;
}

}  // namespace fci::alt
