#include "fci/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fci/ops.hpp"

namespace fci::router {

template <typename T>
T RouterParams<T>::score_scale() const {
    return T(1) / (static_cast<T>(heads) * std::sqrt(static_cast<T>(head_dim())));
}

template <typename T>
RouterParams<T> RouterParams<T>::init(std::size_t d, std::size_t heads, double stddev, Rng& rng) {
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("RouterParams: d=" + std::to_string(d) + " not divisible by H=" + std::to_string(heads));
    }
    RouterParams p;
    p.heads = heads;
    for (std::size_t h = 0; h < heads; ++h) {
        p.wq.push_back(normal_tensor<T>({d, d / heads}, stddev, rng));
        p.wk.push_back(normal_tensor<T>({d, d / heads}, stddev, rng));
    }
    return p;
}

template <typename T>
void RouterParams<T>::collect(ParamSet<T>& set, const std::string& prefix) const {
    for (std::size_t h = 0; h < heads; ++h) {
        set.add(prefix + ".h" + std::to_string(h) + ".wq", wq[h]);
        set.add(prefix + ".h" + std::to_string(h) + ".wk", wk[h]);
    }
}

template <typename T>
RouterParams<T> RouterParams<T>::clone() const {
    RouterParams p;
    p.heads = heads;
    for (const auto& w : wq) p.wq.push_back(w.clone());
    for (const auto& w : wk) p.wk.push_back(w.clone());
    return p;
}

namespace {

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
    Graph<T> g(false);
    return ops::concat_cols(g, std::span<const Tensor<T>>(parts)).detach();
}

}  // namespace

template <typename T>
Tensor<T> RouterParams<T>::stacked_query() const {
    return stack(wq);
}

template <typename T>
Tensor<T> RouterParams<T>::stacked_key() const {
    return stack(wk);
}

void RouterConfig::validate(std::size_t length, std::size_t excluded) const {
    if (k < 1) throw ConfigError("RouterConfig: k must be >= 1");
    if (excluded > length || k > length - excluded) {
        throw ConfigError("RouterConfig: k=" + std::to_string(k) + " exceeds the " +
                          std::to_string(length - std::min(excluded, length)) + " selectable positions");
    }
}

void RoutingSupervision::validate(std::size_t length) const {
    if (query >= length || key >= length) {
        throw ContractError("RoutingSupervision: position outside sequence of length " + std::to_string(length));
    }
    if (query == key) throw ContractError("RoutingSupervision: query and gold key positions coincide");
}

bool Selection::contains_top(std::size_t pos) const {
    return std::binary_search(top.begin(), top.end(), pos);
}

bool Selection::contains_expanded(std::size_t pos) const {
    return std::binary_search(expanded.begin(), expanded.end(), pos);
}

template <typename T>
Tensor<T> routing_row_against(Graph<T>& g, const Tensor<T>& query_rep, const Tensor<T>& key_reps,
                              const RouterParams<T>& params) {
    Tensor<T> acc;
    for (std::size_t h = 0; h < params.heads; ++h) {
        auto q = ops::matmul(g, query_rep, params.wq[h]);
        auto k = ops::matmul(g, key_reps, params.wk[h]);
        auto s = ops::matmul_nt(g, q, k);
        acc = acc.defined() ? ops::add(g, acc, s) : s;
    }
    return ops::scale(g, acc, params.score_scale());
}

template <typename T>
Tensor<T> routing_scores(Graph<T>& g, const Tensor<T>& reps, const RouterParams<T>& params) {
    return routing_row_against(g, reps, reps, params);
}

template <typename T>
Tensor<T> routing_row(Graph<T>& g, const Tensor<T>& reps, std::size_t q, const RouterParams<T>& params) {
    return routing_row_against(g, ops::row(g, reps, q), reps, params);
}

template <typename T>
Selection select_topk(std::span<const T> score_row, const RouterConfig& config, std::span<const std::size_t> exclude) {
    const std::size_t len = score_row.size();
    std::vector<char> skip(len, 0);
    std::size_t n_excluded = 0;
    for (auto e : exclude) {
        if (e < len && !skip[e]) {
            skip[e] = 1;
            ++n_excluded;
        }
    }
    config.validate(len, n_excluded);
    std::vector<std::size_t> candidates;
    candidates.reserve(len - n_excluded);
    for (std::size_t j = 0; j < len; ++j)
        if (!skip[j]) candidates.push_back(j);
    auto better = [&](std::size_t a, std::size_t b) {
        if (score_row[a] != score_row[b]) return score_row[a] > score_row[b];
        return a < b;
    };
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(config.k),
                      candidates.end(), better);
    Selection sel;
    sel.top.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(config.k));
    std::sort(sel.top.begin(), sel.top.end());
    sel.expanded = sel.top;
    for (auto j : sel.top) {
        for (std::size_t w = 1; w <= config.neighbor_width; ++w) sel.expanded.push_back(std::min(j + w, len - 1));
    }
    std::sort(sel.expanded.begin(), sel.expanded.end());
    sel.expanded.erase(std::unique(sel.expanded.begin(), sel.expanded.end()), sel.expanded.end());
    return sel;
}

template <typename T>
Tensor<T> routing_loss(Graph<T>& g, const Tensor<T>& scores, const RoutingSupervision& sup) {
    const std::size_t len = scores.cols();
    sup.validate(len);
    Tensor<T> row_q;
    if (scores.rank() == 2 && scores.rows() == len && len > 1) {
        row_q = ops::row(g, scores, sup.query);
    } else if (scores.rows() == 1) {
        row_q = scores;
    } else {
        throw DimensionError("routing_loss: expected L x L scores or a 1 x L row, got " + shape_str(scores.shape()));
    }
    const std::size_t excluded[1] = {sup.query};
    return ops::cross_entropy(g, row_q, sup.key, std::span<const std::size_t>(excluded, 1));
}

template <typename T>
RouterParams<T> randomize_projections(const RouterParams<T>& params, std::uint64_t seed) {
    Rng rng(seed);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(params.d_model()));
    RouterParams<T> out;
    out.heads = params.heads;
    for (std::size_t h = 0; h < params.heads; ++h) {
        out.wq.push_back(normal_tensor<T>(params.wq[h].shape(), stddev, rng, false));
        out.wk.push_back(normal_tensor<T>(params.wk[h].shape(), stddev, rng, false));
    }
    return out;
}

#define FCI_INSTANTIATE_ROUTER(T)                                                                         \
    template struct RouterParams<T>;                                                                      \
    template Tensor<T> routing_scores(Graph<T>&, const Tensor<T>&, const RouterParams<T>&);               \
    template Tensor<T> routing_row(Graph<T>&, const Tensor<T>&, std::size_t, const RouterParams<T>&);     \
    template Tensor<T> routing_row_against(Graph<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                                           const RouterParams<T>&);                                       \
    template Selection select_topk(std::span<const T>, const RouterConfig&, std::span<const std::size_t>); \
    template Tensor<T> routing_loss(Graph<T>&, const Tensor<T>&, const RoutingSupervision&);              \
    template RouterParams<T> randomize_projections(const RouterParams<T>&, std::uint64_t);

FCI_INSTANTIATE_ROUTER(float)
FCI_INSTANTIATE_ROUTER(double)

}  // namespace fci::router
