#include "fci/council.hpp"

#include "fci/ops.hpp"

namespace fci::council {

template <typename T>
CouncilParams<T> CouncilParams<T>::init(std::size_t d, std::size_t heads, std::size_t value_vocab, Rng& rng) {
    CouncilParams p;
    p.layer = attn::AttnLayerParams<T>::init(d, heads, rng);
    p.head_w = normal_tensor<T>({d, value_vocab}, 0.02, rng);
    p.head_b = Tensor<T>({value_vocab}, true);
    return p;
}

template <typename T>
void CouncilParams<T>::collect(ParamSet<T>& set, const std::string& prefix) const {
    layer.collect(set, prefix + ".attn");
    set.add(prefix + ".head_w", head_w);
    set.add(prefix + ".head_b", head_b, false);
}

template <typename T>
attn::MhaOutput<T> sparse_attention(Graph<T>& g, const Tensor<T>& x, std::span<const std::size_t> selected,
                                    const CouncilParams<T>& params,
                                    std::optional<std::span<const std::size_t>> queries, bool keep_weights) {
    if (selected.empty()) throw ContractError("sparse_attention: empty selection");
    for (auto j : selected) {
        if (j >= x.rows()) {
            throw IndexError("sparse_attention: selected position " + std::to_string(j) + " outside length " +
                             std::to_string(x.rows()));
        }
    }
    if (queries) {
        for (auto q : *queries)
            if (q >= x.rows()) throw IndexError("sparse_attention: query position outside sequence");
    }
    return attn::attention_layer<T>(g, x, params.layer, queries, selected, keep_weights);
}

template <typename T>
Tensor<T> predict_value(Graph<T>& g, const Tensor<T>& y, std::size_t q, const CouncilParams<T>& params) {
    if (q >= y.rows()) throw IndexError("predict_value: row " + std::to_string(q) + " outside " + shape_str(y.shape()));
    return ops::add_bias(g, ops::matmul(g, ops::row(g, y, q), params.head_w), params.head_b);
}

#define FCI_INSTANTIATE_COUNCIL(T)                                                                              \
    template struct CouncilParams<T>;                                                                           \
    template attn::MhaOutput<T> sparse_attention(Graph<T>&, const Tensor<T>&, std::span<const std::size_t>,     \
                                                 const CouncilParams<T>&,                                       \
                                                 std::optional<std::span<const std::size_t>>, bool);            \
    template Tensor<T> predict_value(Graph<T>&, const Tensor<T>&, std::size_t, const CouncilParams<T>&);

FCI_INSTANTIATE_COUNCIL(float)
FCI_INSTANTIATE_COUNCIL(double)

}  // namespace fci::council
