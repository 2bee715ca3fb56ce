#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "fci/attention.hpp"
#include "fci/params.hpp"
#include "fci/tensor.hpp"

namespace fci::council {

template <typename T>
struct CouncilParams {
    attn::AttnLayerParams<T> layer;
    Tensor<T> head_w;  // d x V
    Tensor<T> head_b;  // V

    std::size_t value_vocab() const { return head_w.cols(); }

    static CouncilParams init(std::size_t d, std::size_t heads, std::size_t value_vocab, Rng& rng);
    void collect(ParamSet<T>& set, const std::string& prefix) const;
};

/// One pre-norm attention layer whose keys and values come only from `selected`.
///
/// Queries are all positions, or only `queries` when given; the output has one
/// row per query. Weights outside `selected` are zero by construction.
template <typename T>
attn::MhaOutput<T> sparse_attention(Graph<T>& g, const Tensor<T>& x, std::span<const std::size_t> selected,
                                    const CouncilParams<T>& params,
                                    std::optional<std::span<const std::size_t>> queries = std::nullopt,
                                    bool keep_weights = false);

/// Linear head on row `q` of y: [1 x V] logits.
template <typename T>
Tensor<T> predict_value(Graph<T>& g, const Tensor<T>& y, std::size_t q, const CouncilParams<T>& params);

}  // namespace fci::council
