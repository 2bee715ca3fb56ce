#include "fci/flow.hpp"

#include <cmath>

#include "fci/ops.hpp"

namespace fci::flow {

void FlowConfig::validate() const {
    if (d_model < 1 || d_state < 1 || conv_width < 1 || layers < 1) {
        throw ConfigError("FlowConfig: all dimensions must be >= 1");
    }
}

template <typename T>
FlowBlockParams<T> FlowBlockParams<T>::init(const FlowConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t d = cfg.d_model, n = cfg.d_state, w = cfg.conv_width;
    FlowBlockParams p;
    p.in_proj = normal_tensor<T>({d, 2 * d}, 0.02, rng);
    p.conv = normal_tensor<T>({w, d}, 1.0 / std::sqrt(static_cast<double>(w)), rng);
    p.conv_bias = Tensor<T>({d}, true);
    p.dt_proj = normal_tensor<T>({d, d}, 0.02, rng);
    p.dt_bias = Tensor<T>({d}, true);
    // step sizes log-spaced over [1e-3, 1e-1], stored through the inverse softplus
    for (std::size_t c = 0; c < d; ++c) {
        const double frac = d > 1 ? static_cast<double>(c) / static_cast<double>(d - 1) : 0.0;
        const double dt = std::exp(std::log(1e-3) + frac * (std::log(1e-1) - std::log(1e-3)));
        p.dt_bias[c] = static_cast<T>(dt + std::log(-std::expm1(-dt)));
    }
    p.b_proj = normal_tensor<T>({d, n}, 0.02, rng);
    p.c_proj = normal_tensor<T>({d, n}, 0.02, rng);
    p.a_log = Tensor<T>({d, n}, true);
    for (std::size_t c = 0; c < d; ++c)
        for (std::size_t s = 0; s < n; ++s) p.a_log.at(c, s) = static_cast<T>(std::log(static_cast<double>(s + 1)));
    p.out_proj = normal_tensor<T>({d, d}, 0.02, rng);
    return p;
}

template <typename T>
FlowBlockParams<T> FlowBlockParams<T>::zeros(const FlowConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.d_model, n = cfg.d_state, w = cfg.conv_width;
    FlowBlockParams p;
    p.in_proj = Tensor<T>({d, 2 * d}, true);
    p.conv = Tensor<T>({w, d}, true);
    p.conv_bias = Tensor<T>({d}, true);
    p.dt_proj = Tensor<T>({d, d}, true);
    p.dt_bias = Tensor<T>({d}, true);
    p.b_proj = Tensor<T>({d, n}, true);
    p.c_proj = Tensor<T>({d, n}, true);
    p.a_log = Tensor<T>({d, n}, true);
    p.out_proj = Tensor<T>({d, d}, true);
    return p;
}

template <typename T>
void FlowBlockParams<T>::collect(ParamSet<T>& set, const std::string& prefix) const {
    set.add(prefix + ".in_proj", in_proj);
    set.add(prefix + ".conv", conv);
    set.add(prefix + ".conv_bias", conv_bias, false);
    set.add(prefix + ".dt_proj", dt_proj);
    set.add(prefix + ".dt_bias", dt_bias, false);
    set.add(prefix + ".b_proj", b_proj);
    set.add(prefix + ".c_proj", c_proj);
    set.add(prefix + ".a_log", a_log, false);
    set.add(prefix + ".out_proj", out_proj);
}

template <typename T>
Tensor<T> scan(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a, const Tensor<T>& b,
               const Tensor<T>& c) {
    const std::size_t len = x.rows(), d = x.cols(), n = a.cols();
    if (delta.shape() != x.shape() || a.rows() != d || b.rows() != len || c.rows() != len || b.cols() != n ||
        c.cols() != n) {
        throw DimensionError("scan: inconsistent shapes x" + shape_str(x.shape()) + " delta" +
                             shape_str(delta.shape()) + " A" + shape_str(a.shape()) + " B" +
                             shape_str(b.shape()) + " C" + shape_str(c.shape()));
    }
    Tensor<T> out({len, d});
    std::vector<T> states(len * d * n);
    std::vector<T> h(d * n, T(0));
    auto xv = x.data(), dv = delta.data(), av = a.data(), bv = b.data(), cv = c.data();
    auto yv = out.data();
    for (std::size_t t = 0; t < len; ++t) {
        const T* bt = bv.data() + t * n;
        const T* ct = cv.data() + t * n;
        for (std::size_t ch = 0; ch < d; ++ch) {
            const T dt = dv[t * d + ch];
            const T u = dt * xv[t * d + ch];
            const T* ac = av.data() + ch * n;
            T* hc = h.data() + ch * n;
            T acc = 0;
            for (std::size_t s = 0; s < n; ++s) {
                hc[s] = std::exp(dt * ac[s]) * hc[s] + u * bt[s];
                acc += ct[s] * hc[s];
            }
            yv[t * d + ch] = acc;
        }
        std::copy(h.begin(), h.end(), states.begin() + static_cast<std::ptrdiff_t>(t * d * n));
    }
    if (g.tracks(x, delta, a, b, c)) {
        g.record("selective_scan", {x.id(), delta.id(), a.id(), b.id(), c.id()}, out,
                 [x, delta, a, b, c, states = std::move(states), len, d, n](const Tensor<T>& o) mutable {
                     auto gy = o.grad();
                     auto xv = x.data(), dv = delta.data(), av = a.data(), bv = b.data(), cv = c.data();
                     std::vector<T> gx(len * d, T(0)), gdelta(len * d, T(0)), ga(d * n, T(0)),
                         gb(len * n, T(0)), gc(len * n, T(0));
                     std::vector<T> dh(d * n, T(0));
                     for (std::size_t t = len; t-- > 0;) {
                         const T* bt = bv.data() + t * n;
                         const T* ct = cv.data() + t * n;
                         const T* hs = states.data() + t * d * n;
                         const T* hp = t > 0 ? states.data() + (t - 1) * d * n : nullptr;
                         for (std::size_t ch = 0; ch < d; ++ch) {
                             const T dy = gy[t * d + ch];
                             const T dt = dv[t * d + ch];
                             const T xt = xv[t * d + ch];
                             const T* ac = av.data() + ch * n;
                             T* dhc = dh.data() + ch * n;
                             T ddelta = 0, dxt = 0;
                             for (std::size_t s = 0; s < n; ++s) {
                                 const T h_t = hs[ch * n + s];
                                 const T h_prev = hp ? hp[ch * n + s] : T(0);
                                 gc[t * n + s] += dy * h_t;
                                 const T gh = dhc[s] + dy * ct[s];
                                 const T abar = std::exp(dt * ac[s]);
                                 const T dabar = gh * h_prev * abar;
                                 ddelta += dabar * ac[s] + gh * bt[s] * xt;
                                 ga[ch * n + s] += dabar * dt;
                                 gb[t * n + s] += gh * dt * xt;
                                 dxt += gh * dt * bt[s];
                                 dhc[s] = gh * abar;
                             }
                             gdelta[t * d + ch] += ddelta;
                             gx[t * d + ch] += dxt;
                         }
                     }
                     auto push = [](const Tensor<T>& t, const std::vector<T>& src) {
                         if (!t.requires_grad()) return;
                         auto dst = t.grad();
                         for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
                     };
                     push(x, gx);
                     push(delta, gdelta);
                     push(a, ga);
                     push(b, gb);
                     push(c, gc);
                 });
    }
    return out;
}

template <typename T>
Tensor<T> selective_scan(Graph<T>& g, const Tensor<T>& x, const FlowBlockParams<T>& p) {
    auto delta = ops::softplus(g, ops::add_bias(g, ops::matmul(g, x, p.dt_proj), p.dt_bias));
    auto b = ops::matmul(g, x, p.b_proj);
    auto c = ops::matmul(g, x, p.c_proj);
    auto a = ops::scale(g, ops::exp(g, p.a_log), T(-1));
    return scan(g, x, delta, a, b, c);
}

template <typename T>
Tensor<T> flow_branch(Graph<T>& g, const Tensor<T>& x, const FlowBlockParams<T>& p) {
    const std::size_t d = x.cols();
    auto proj = ops::matmul(g, x, p.in_proj);
    auto stream = ops::slice_cols(g, proj, 0, d);
    auto gate = ops::slice_cols(g, proj, d, d);
    auto conv = ops::add_bias(g, ops::depthwise_conv1d(g, stream, p.conv, true), p.conv_bias);
    auto u = ops::silu(g, conv);
    auto y = selective_scan(g, u, p);
    auto gated = ops::mul(g, y, ops::silu(g, gate));
    return ops::matmul(g, gated, p.out_proj);
}

template <typename T>
Tensor<T> flow_block(Graph<T>& g, const Tensor<T>& x, const FlowBlockParams<T>& p) {
    return ops::add(g, x, flow_branch(g, x, p));
}

template <typename T>
Tensor<T> bidirectional_flow(Graph<T>& g, const Tensor<T>& x, const FlowBlockParams<T>& fwd,
                             const FlowBlockParams<T>& bwd) {
    auto forward = flow_block(g, x, fwd);
    auto backward = ops::reverse_rows(g, flow_branch(g, ops::reverse_rows(g, x), bwd));
    return ops::add(g, forward, backward);
}

#define FCI_INSTANTIATE_FLOW(T)                                                                             \
    template struct FlowBlockParams<T>;                                                                     \
    template Tensor<T> scan(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                            const Tensor<T>&);                                                              \
    template Tensor<T> selective_scan(Graph<T>&, const Tensor<T>&, const FlowBlockParams<T>&);               \
    template Tensor<T> flow_branch(Graph<T>&, const Tensor<T>&, const FlowBlockParams<T>&);                  \
    template Tensor<T> flow_block(Graph<T>&, const Tensor<T>&, const FlowBlockParams<T>&);                   \
    template Tensor<T> bidirectional_flow(Graph<T>&, const Tensor<T>&, const FlowBlockParams<T>&,            \
                                          const FlowBlockParams<T>&);

FCI_INSTANTIATE_FLOW(float)
FCI_INSTANTIATE_FLOW(double)

}  // namespace fci::flow
