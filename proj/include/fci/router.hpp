#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fci/params.hpp"
#include "fci/tensor.hpp"

namespace fci::router {

/// Per-head query/key projections of the pairwise routing score
///   s_ij = (1/H) sum_h (W_q^h x_i)^T (W_k^h x_j) / sqrt(d/H).
template <typename T>
struct RouterParams {
    std::size_t heads = 4;
    std::vector<Tensor<T>> wq, wk;  // d x (d/H) each

    std::size_t d_model() const { return wq.front().rows(); }
    std::size_t head_dim() const { return wq.front().cols(); }
    /// 1 / (H * sqrt(d/H)), the factor applied to the summed head dot products.
    T score_scale() const;

    static RouterParams init(std::size_t d, std::size_t heads, double stddev, Rng& rng);
    void collect(ParamSet<T>& set, const std::string& prefix) const;
    RouterParams clone() const;

    /// Heads side by side as one d x d matrix: [W_q^1 | ... | W_q^H].
    Tensor<T> stacked_query() const;
    Tensor<T> stacked_key() const;
};

struct RouterConfig {
    std::size_t k = 8;
    std::size_t neighbor_width = 1;  // forward expansion: j selects j+1..j+width

    void validate(std::size_t length, std::size_t excluded = 1) const;
};

struct RoutingSupervision {
    std::size_t query = 0;
    std::size_t key = 0;

    void validate(std::size_t length) const;
};

struct Selection {
    std::vector<std::size_t> top;       // pre-expansion, ascending
    std::vector<std::size_t> expanded;  // after neighbour expansion, ascending

    bool contains_top(std::size_t pos) const;
    bool contains_expanded(std::size_t pos) const;
};

/// Full L x L score matrix.
template <typename T>
Tensor<T> routing_scores(Graph<T>& g, const Tensor<T>& reps, const RouterParams<T>& params);

/// Row q of the score matrix as [1 x L], computed without the other rows.
template <typename T>
Tensor<T> routing_row(Graph<T>& g, const Tensor<T>& reps, std::size_t q, const RouterParams<T>& params);

/// Scores of the query row against an arbitrary set of key rows, [1 x keys].
template <typename T>
Tensor<T> routing_row_against(Graph<T>& g, const Tensor<T>& query_rep, const Tensor<T>& key_reps,
                              const RouterParams<T>& params);

/// Top-k by score with lower-index tie-break, excluded positions skipped, then
/// forward neighbour expansion clipped at L-1.
template <typename T>
Selection select_topk(std::span<const T> score_row, const RouterConfig& config,
                      std::span<const std::size_t> exclude);

/// Cross-entropy of row s_q (query position masked out) against the gold key.
/// Accepts the full L x L matrix or the q row alone.
template <typename T>
Tensor<T> routing_loss(Graph<T>& g, const Tensor<T>& scores, const RoutingSupervision& sup);

/// Fresh Gaussian projections (std 1/sqrt(d)) with the same shapes; `params` is untouched.
template <typename T>
RouterParams<T> randomize_projections(const RouterParams<T>& params, std::uint64_t seed);

}  // namespace fci::router
