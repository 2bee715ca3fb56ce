#include "fci/attention.hpp"

#include <atomic>
#include <cmath>

#include "fci/ops.hpp"

namespace fci::attn {

namespace {

std::atomic<std::size_t> g_linear_clamps{0};

constexpr double kLinearAttnFloor = 1e-6;

}  // namespace

std::size_t linear_attention_clamp_count() { return g_linear_clamps.load(); }

template <typename T>
FeedForward<T> FeedForward<T>::init(std::size_t d, Rng& rng) {
    FeedForward f;
    f.w1 = normal_tensor<T>({d, 4 * d}, 0.02, rng);
    f.b1 = Tensor<T>({4 * d}, true);
    f.w2 = normal_tensor<T>({4 * d, 4 * d}, 0.02, rng);
    f.b2 = Tensor<T>({4 * d}, true);
    f.w3 = normal_tensor<T>({4 * d, d}, 0.02, rng);
    f.b3 = Tensor<T>({d}, true);
    return f;
}

template <typename T>
FeedForward<T> FeedForward<T>::zeros(std::size_t d) {
    FeedForward f;
    f.w1 = Tensor<T>({d, 4 * d}, true);
    f.b1 = Tensor<T>({4 * d}, true);
    f.w2 = Tensor<T>({4 * d, 4 * d}, true);
    f.b2 = Tensor<T>({4 * d}, true);
    f.w3 = Tensor<T>({4 * d, d}, true);
    f.b3 = Tensor<T>({d}, true);
    return f;
}

template <typename T>
void FeedForward<T>::collect(ParamSet<T>& set, const std::string& prefix) const {
    set.add(prefix + ".w1", w1);
    set.add(prefix + ".b1", b1, false);
    set.add(prefix + ".w2", w2);
    set.add(prefix + ".b2", b2, false);
    set.add(prefix + ".w3", w3);
    set.add(prefix + ".b3", b3, false);
}

template <typename T>
AttnLayerParams<T> AttnLayerParams<T>::init(std::size_t d, std::size_t heads, Rng& rng) {
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("AttnLayerParams: d=" + std::to_string(d) + " not divisible by H=" + std::to_string(heads));
    }
    AttnLayerParams p;
    p.heads = heads;
    const std::size_t dh = d / heads;
    for (std::size_t h = 0; h < heads; ++h) {
        p.wq.push_back(normal_tensor<T>({d, dh}, 0.02, rng));
        p.wk.push_back(normal_tensor<T>({d, dh}, 0.02, rng));
        p.wv.push_back(normal_tensor<T>({d, dh}, 0.02, rng));
    }
    p.wo = normal_tensor<T>({d, d}, 0.02, rng);
    p.norm1_scale = Tensor<T>::full({d}, T(1), true);
    p.norm1_shift = Tensor<T>({d}, true);
    p.norm2_scale = Tensor<T>::full({d}, T(1), true);
    p.norm2_shift = Tensor<T>({d}, true);
    p.ffn = FeedForward<T>::init(d, rng);
    return p;
}

template <typename T>
AttnLayerParams<T> AttnLayerParams<T>::zeros(std::size_t d, std::size_t heads) {
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("AttnLayerParams: d=" + std::to_string(d) + " not divisible by H=" + std::to_string(heads));
    }
    AttnLayerParams p;
    p.heads = heads;
    const std::size_t dh = d / heads;
    for (std::size_t h = 0; h < heads; ++h) {
        p.wq.emplace_back(Shape{d, dh}, true);
        p.wk.emplace_back(Shape{d, dh}, true);
        p.wv.emplace_back(Shape{d, dh}, true);
    }
    p.wo = Tensor<T>({d, d}, true);
    p.norm1_scale = Tensor<T>::full({d}, T(1), true);
    p.norm1_shift = Tensor<T>({d}, true);
    p.norm2_scale = Tensor<T>::full({d}, T(1), true);
    p.norm2_shift = Tensor<T>({d}, true);
    p.ffn = FeedForward<T>::zeros(d);
    return p;
}

template <typename T>
void AttnLayerParams<T>::collect(ParamSet<T>& set, const std::string& prefix) const {
    for (std::size_t h = 0; h < heads; ++h) {
        const auto hp = prefix + ".h" + std::to_string(h);
        set.add(hp + ".wq", wq[h]);
        set.add(hp + ".wk", wk[h]);
        set.add(hp + ".wv", wv[h]);
    }
    set.add(prefix + ".wo", wo);
    set.add(prefix + ".norm1_scale", norm1_scale, false);
    set.add(prefix + ".norm1_shift", norm1_shift, false);
    set.add(prefix + ".norm2_scale", norm2_scale, false);
    set.add(prefix + ".norm2_shift", norm2_shift, false);
    ffn.collect(set, prefix + ".ffn");
}

template <typename T>
PosEmbedding<T> PosEmbedding<T>::init(std::size_t max_len, std::size_t d, Rng& rng) {
    return PosEmbedding{normal_tensor<T>({max_len, d}, 0.02, rng)};
}

template <typename T>
Tensor<T> PosEmbedding<T>::lookup(Graph<T>& g, std::size_t len) const {
    if (len > table.rows()) {
        throw IndexError("PosEmbedding: length " + std::to_string(len) + " exceeds table of " +
                         std::to_string(table.rows()));
    }
    std::vector<std::size_t> idx(len);
    for (std::size_t i = 0; i < len; ++i) idx[i] = i;
    return ops::gather_rows(g, table, idx);
}

template <typename T>
MhaOutput<T> attend(Graph<T>& g, const Tensor<T>& queries, const Tensor<T>& keys, const AttnLayerParams<T>& p,
                    bool causal, bool keep_weights) {
    const std::size_t heads = p.heads;
    const std::size_t lq = queries.rows(), lk = keys.rows();
    if (queries.cols() != p.d_model() || keys.cols() != p.d_model()) {
        throw DimensionError("attend: inputs must have d=" + std::to_string(p.d_model()) + " columns");
    }
    const T inv_scale = T(1) / std::sqrt(static_cast<T>(p.head_dim()));
    MhaOutput<T> out;
    if (keep_weights) out.weights = Tensor<T>({heads, lq, lk});
    std::vector<Tensor<T>> head_out;
    head_out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto q = ops::scale(g, ops::matmul(g, queries, p.wq[h]), inv_scale);
        auto k = ops::matmul(g, keys, p.wk[h]);
        auto v = ops::matmul(g, keys, p.wv[h]);
        auto w = ops::softmax_rows(g, ops::matmul_nt(g, q, k), causal);
        if (keep_weights) std::copy(w.data().begin(), w.data().end(), out.weights.data().begin() + h * lq * lk);
        head_out.push_back(ops::matmul(g, w, v));
    }
    auto cat = ops::concat_cols(g, std::span<const Tensor<T>>(head_out));
    out.y = ops::matmul(g, cat, p.wo);
    return out;
}

template <typename T>
MhaOutput<T> mha_forward(Graph<T>& g, const Tensor<T>& x, const AttnLayerParams<T>& p, bool causal,
                         bool keep_weights) {
    return attend(g, x, x, p, causal, keep_weights);
}

template <typename T>
Tensor<T> feed_forward(Graph<T>& g, const Tensor<T>& x, const FeedForward<T>& f) {
    auto h1 = ops::silu(g, ops::add_bias(g, ops::matmul(g, x, f.w1), f.b1));
    auto h2 = ops::silu(g, ops::add_bias(g, ops::matmul(g, h1, f.w2), f.b2));
    return ops::add_bias(g, ops::matmul(g, h2, f.w3), f.b3);
}

template <typename T>
MhaOutput<T> attention_layer(Graph<T>& g, const Tensor<T>& x, const AttnLayerParams<T>& p,
                             std::optional<std::span<const std::size_t>> queries,
                             std::optional<std::span<const std::size_t>> keys, bool keep_weights) {
    auto xn = ops::rms_norm(g, x, p.norm1_scale, p.norm1_shift);
    auto xq = queries ? ops::gather_rows(g, xn, *queries) : xn;
    auto xk = keys ? ops::gather_rows(g, xn, *keys) : xn;
    auto att = attend(g, xq, xk, p, false, keep_weights);
    auto residual = queries ? ops::gather_rows(g, x, *queries) : x;
    auto h = ops::add(g, residual, att.y);
    auto ff = feed_forward(g, ops::rms_norm(g, h, p.norm2_scale, p.norm2_shift), p.ffn);
    att.y = ops::add(g, h, ff);
    return att;
}

template <typename T>
Tensor<T> transformer_layer(Graph<T>& g, const Tensor<T>& x, const AttnLayerParams<T>& p) {
    return attention_layer<T>(g, x, p, std::nullopt, std::nullopt, false).y;
}

template <typename T>
Tensor<T> linear_attention(Graph<T>& g, const Tensor<T>& x, const AttnLayerParams<T>& p) {
    if (x.cols() != p.d_model()) throw DimensionError("linear_attention: input width mismatch");
    const T floor = static_cast<T>(kLinearAttnFloor);
    std::vector<Tensor<T>> head_out;
    head_out.reserve(p.heads);
    for (std::size_t h = 0; h < p.heads; ++h) {
        auto fq = ops::elu_plus_one(g, ops::matmul(g, x, p.wq[h]));
        auto fk = ops::elu_plus_one(g, ops::matmul(g, x, p.wk[h]));
        auto v = ops::matmul(g, x, p.wv[h]);
        auto kv = ops::matmul_tn(g, fk, v);   // dh x dh running sum of phi(k) v^T
        auto z = ops::col_sums(g, fk);        // 1 x dh running sum of phi(k)
        auto num = ops::matmul(g, fq, kv);
        auto den = ops::matmul_nt(g, fq, z);  // L x 1
        for (T v : den.data())
            if (v < floor) g_linear_clamps.fetch_add(1);
        head_out.push_back(ops::div_rows(g, num, den, floor));
    }
    auto cat = ops::concat_cols(g, std::span<const Tensor<T>>(head_out));
    return ops::matmul(g, cat, p.wo);
}

template <typename T>
Tensor<T> linear_attention_layer(Graph<T>& g, const Tensor<T>& x, const AttnLayerParams<T>& p) {
    auto xn = ops::rms_norm(g, x, p.norm1_scale, p.norm1_shift);
    auto h = ops::add(g, x, linear_attention(g, xn, p));
    auto ff = feed_forward(g, ops::rms_norm(g, h, p.norm2_scale, p.norm2_shift), p.ffn);
    return ops::add(g, h, ff);
}

#define FCI_INSTANTIATE_ATTN(T)                                                                              \
    template struct FeedForward<T>;                                                                          \
    template struct AttnLayerParams<T>;                                                                      \
    template struct PosEmbedding<T>;                                                                         \
    template MhaOutput<T> attend(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const AttnLayerParams<T>&,   \
                                 bool, bool);                                                                \
    template MhaOutput<T> mha_forward(Graph<T>&, const Tensor<T>&, const AttnLayerParams<T>&, bool, bool);   \
    template Tensor<T> feed_forward(Graph<T>&, const Tensor<T>&, const FeedForward<T>&);                     \
    template MhaOutput<T> attention_layer(Graph<T>&, const Tensor<T>&, const AttnLayerParams<T>&,            \
                                          std::optional<std::span<const std::size_t>>,                       \
                                          std::optional<std::span<const std::size_t>>, bool);                \
    template Tensor<T> transformer_layer(Graph<T>&, const Tensor<T>&, const AttnLayerParams<T>&);            \
    template Tensor<T> linear_attention(Graph<T>&, const Tensor<T>&, const AttnLayerParams<T>&);             \
    template Tensor<T> linear_attention_layer(Graph<T>&, const Tensor<T>&, const AttnLayerParams<T>&);

FCI_INSTANTIATE_ATTN(float)
FCI_INSTANTIATE_ATTN(double)

}  // namespace fci::attn
