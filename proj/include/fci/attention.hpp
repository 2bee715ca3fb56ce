#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fci/params.hpp"
#include "fci/tensor.hpp"

namespace fci::attn {

/// d -> 4d -> 4d -> d with SiLU after each hidden layer.
template <typename T>
struct FeedForward {
    Tensor<T> w1, b1, w2, b2, w3, b3;

    static FeedForward init(std::size_t d, Rng& rng);
    static FeedForward zeros(std::size_t d);
    void collect(ParamSet<T>& set, const std::string& prefix) const;
};

template <typename T>
struct AttnLayerParams {
    std::size_t heads = 4;
    std::vector<Tensor<T>> wq, wk, wv;  // one d x (d/H) matrix per head
    Tensor<T> wo;                       // d x d
    Tensor<T> norm1_scale, norm1_shift, norm2_scale, norm2_shift;
    FeedForward<T> ffn;

    std::size_t d_model() const { return wo.rows(); }
    std::size_t head_dim() const { return d_model() / heads; }

    static AttnLayerParams init(std::size_t d, std::size_t heads, Rng& rng);
    /// All projection and FFN weights zero, norms at unit scale.
    static AttnLayerParams zeros(std::size_t d, std::size_t heads);
    void collect(ParamSet<T>& set, const std::string& prefix) const;
};

/// Learned absolute position table.
template <typename T>
struct PosEmbedding {
    Tensor<T> table;  // max_len x d

    static PosEmbedding init(std::size_t max_len, std::size_t d, Rng& rng);
    Tensor<T> lookup(Graph<T>& g, std::size_t len) const;
};

template <typename T>
struct MhaOutput {
    Tensor<T> y;        // queries x d
    Tensor<T> weights;  // H x queries x keys, detached copy; empty unless requested
};

/// Multi-head attention of `queries` over `keys` (both already normalised).
///
/// Per head softmax(Q K^T / sqrt(d/H)) V, heads concatenated and projected by W_o.
template <typename T>
MhaOutput<T> attend(Graph<T>& g, const Tensor<T>& queries, const Tensor<T>& keys, const AttnLayerParams<T>& p,
                    bool causal, bool keep_weights);

/// Self-attention of x over itself.
template <typename T>
MhaOutput<T> mha_forward(Graph<T>& g, const Tensor<T>& x, const AttnLayerParams<T>& p, bool causal,
                         bool keep_weights = false);

template <typename T>
Tensor<T> feed_forward(Graph<T>& g, const Tensor<T>& x, const FeedForward<T>& f);

/// Pre-norm residual layer restricted to key rows `keys` and query rows `queries`.
///
/// An empty optional means "all rows". The result has one row per query.
template <typename T>
MhaOutput<T> attention_layer(Graph<T>& g, const Tensor<T>& x, const AttnLayerParams<T>& p,
                             std::optional<std::span<const std::size_t>> queries,
                             std::optional<std::span<const std::size_t>> keys, bool keep_weights);

/// x + MHA(norm(x)), then + FFN(norm(.)); non-causal.
template <typename T>
Tensor<T> transformer_layer(Graph<T>& g, const Tensor<T>& x, const AttnLayerParams<T>& p);

/// Kernelised attention with phi(u) = elu(u) + 1 in running-sum form:
/// y_i = phi(q_i)^T (sum_j phi(k_j) v_j^T) / (phi(q_i)^T sum_j phi(k_j)), per head,
/// concatenated and projected by W_o. Denominators are floored at 1e-6.
template <typename T>
Tensor<T> linear_attention(Graph<T>& g, const Tensor<T>& x, const AttnLayerParams<T>& p);

/// Pre-norm residual layer with linear attention in place of softmax attention.
template <typename T>
Tensor<T> linear_attention_layer(Graph<T>& g, const Tensor<T>& x, const AttnLayerParams<T>& p);

/// Number of denominators clamped by linear_attention since process start.
std::size_t linear_attention_clamp_count();

}  // namespace fci::attn
