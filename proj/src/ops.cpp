#include "fci/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "fci/eigen_view.hpp"

namespace fci::ops {

namespace {

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
    if (t.rank() != 1 && t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
    }
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

template <typename T, typename F, typename DF>
Tensor<T> unary(Graph<T>& g, const Tensor<T>& x, std::string_view name, F f, DF df) {
    Tensor<T> out(x.shape());
    auto xs = x.data();
    auto ys = out.data();
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = f(xs[i]);
    if (g.tracks(x)) {
        g.record(name, {x.id()}, out, [x, df](const Tensor<T>& o) mutable {
            auto go = o.grad();
            auto gx = x.grad();
            auto xv = x.data();
            auto yv = o.data();
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * df(xv[i], yv[i]);
        });
    }
    return out;
}

template <typename T>
T sigmoid_scalar(T x) {
    if (x >= 0) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace

// ---- linear algebra -------------------------------------------------------

template <typename T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    Tensor<T> out({a.rows(), b.cols()});
    view(out).noalias() = view(a) * view(b);
    if (g.tracks(a, b)) {
        g.record("matmul", {a.id(), b.id()}, out, [a, b](const Tensor<T>& o) mutable {
            auto go = grad_view(o);
            if (a.requires_grad()) grad_view(a).noalias() += go * view(b).transpose();
            if (b.requires_grad()) grad_view(b).noalias() += view(a).transpose() * go;
        });
    }
    return out;
}

template <typename T>
Tensor<T> matmul_nt(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()) + "^T");
    }
    Tensor<T> out({a.rows(), b.rows()});
    view(out).noalias() = view(a) * view(b).transpose();
    if (g.tracks(a, b)) {
        g.record("matmul_nt", {a.id(), b.id()}, out, [a, b](const Tensor<T>& o) mutable {
            auto go = grad_view(o);
            if (a.requires_grad()) grad_view(a).noalias() += go * view(b);
            if (b.requires_grad()) grad_view(b).noalias() += go.transpose() * view(a);
        });
    }
    return out;
}

template <typename T>
Tensor<T> matmul_tn(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
    require_rank2(a, "matmul_tn");
    require_rank2(b, "matmul_tn");
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_tn: inner dimensions disagree " + shape_str(a.shape()) + "^T x " +
                             shape_str(b.shape()));
    }
    Tensor<T> out({a.cols(), b.cols()});
    view(out).noalias() = view(a).transpose() * view(b);
    if (g.tracks(a, b)) {
        g.record("matmul_tn", {a.id(), b.id()}, out, [a, b](const Tensor<T>& o) mutable {
            auto go = grad_view(o);
            if (a.requires_grad()) grad_view(a).noalias() += view(b) * go.transpose();
            if (b.requires_grad()) grad_view(b).noalias() += view(a) * go;
        });
    }
    return out;
}

// ---- elementwise ------------------------------------------------------------

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
    require_same(a, b, "add");
    Tensor<T> out(a.shape());
    auto av = a.data(), bv = b.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (g.tracks(a, b)) {
        g.record("add", {a.id(), b.id()}, out, [a, b](const Tensor<T>& o) mutable {
            auto go = o.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
    require_same(a, b, "sub");
    Tensor<T> out(a.shape());
    auto av = a.data(), bv = b.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    if (g.tracks(a, b)) {
        g.record("sub", {a.id(), b.id()}, out, [a, b](const Tensor<T>& o) mutable {
            auto go = o.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
    require_same(a, b, "mul");
    Tensor<T> out(a.shape());
    auto av = a.data(), bv = b.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (g.tracks(a, b)) {
        g.record("mul", {a.id(), b.id()}, out, [a, b](const Tensor<T>& o) mutable {
            auto go = o.grad();
            auto av = a.data(), bv = b.data();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& a, T factor) {
    return unary(
        g, a, "scale", [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_bias(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& bias) {
    require_rank2(x, "add_bias");
    const std::size_t m = x.rows(), n = x.cols();
    if (bias.numel() != n) {
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs " + shape_str(x.shape()));
    }
    Tensor<T> out(x.shape());
    auto xv = x.data(), bv = bias.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = xv[i * n + j] + bv[j];
    if (g.tracks(x, bias)) {
        g.record("add_bias", {x.id(), bias.id()}, out, [x, bias, m, n](const Tensor<T>& o) mutable {
            auto go = o.grad();
            if (x.requires_grad()) {
                auto gx = x.grad();
                for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
            }
            if (bias.requires_grad()) {
                auto gb = bias.grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> silu(Graph<T>& g, const Tensor<T>& x) {
    return unary(
        g, x, "silu", [](T v) { return v * sigmoid_scalar(v); },
        [](T v, T) {
            const T s = sigmoid_scalar(v);
            return s * (T(1) + v * (T(1) - s));
        });
}

template <typename T>
Tensor<T> sigmoid(Graph<T>& g, const Tensor<T>& x) {
    return unary(
        g, x, "sigmoid", [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softplus(Graph<T>& g, const Tensor<T>& x) {
    return unary(
        g, x, "softplus", [](T v) { return v > T(20) ? v : std::log1p(std::exp(v)); },
        [](T v, T) { return sigmoid_scalar(v); });
}

template <typename T>
Tensor<T> exp(Graph<T>& g, const Tensor<T>& x) {
    return unary(
        g, x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> elu_plus_one(Graph<T>& g, const Tensor<T>& x) {
    return unary(
        g, x, "elu_plus_one", [](T v) { return v > T(0) ? v + T(1) : std::exp(v); },
        [](T v, T y) { return v > T(0) ? T(1) : y; });
}

// ---- reductions and normalisation -------------------------------------------

template <typename T>
Tensor<T> softmax_rows(Graph<T>& g, const Tensor<T>& m, bool causal) {
    require_rank2(m, "softmax_rows");
    const std::size_t r = m.rows(), c = m.cols();
    Tensor<T> out(m.shape());
    auto mv = m.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t span = causal ? std::min(i + 1, c) : c;
        const T* in = mv.data() + i * c;
        T* o = ov.data() + i * c;
        T mx = in[0];
        for (std::size_t j = 1; j < span; ++j) mx = std::max(mx, in[j]);
        T total = 0;
        for (std::size_t j = 0; j < span; ++j) {
            o[j] = std::exp(in[j] - mx);
            total += o[j];
        }
        const T inv = T(1) / total;
        for (std::size_t j = 0; j < span; ++j) o[j] *= inv;
    }
    if (g.tracks(m)) {
        g.record("softmax_rows", {m.id()}, out, [m, r, c](const Tensor<T>& o) mutable {
            auto go = o.grad();
            auto yv = o.data();
            auto gm = m.grad();
            for (std::size_t i = 0; i < r; ++i) {
                const T* y = yv.data() + i * c;
                const T* dy = go.data() + i * c;
                T dot = 0;
                for (std::size_t j = 0; j < c; ++j) dot += dy[j] * y[j];
                T* dx = gm.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) dx[j] += y[j] * (dy[j] - dot);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> cross_entropy(Graph<T>& g, const Tensor<T>& logits, std::size_t target,
                        std::span<const std::size_t> excluded) {
    const std::size_t c = logits.numel();
    if (target >= c) {
        throw IndexError("cross_entropy: target " + std::to_string(target) + " outside " +
                         std::to_string(c) + " classes");
    }
    std::vector<char> mask(c, 0);
    for (auto e : excluded) {
        if (e >= c) throw IndexError("cross_entropy: excluded index out of range");
        mask[e] = 1;
    }
    if (mask[target]) throw ContractError("cross_entropy: target is excluded");
    auto z = logits.data();
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j)
        if (!mask[j]) mx = std::max(mx, z[j]);
    T total = 0;
    for (std::size_t j = 0; j < c; ++j)
        if (!mask[j]) total += std::exp(z[j] - mx);
    const T lse = mx + std::log(total);
    auto out = Tensor<T>::scalar(lse - z[target]);
    if (g.tracks(logits)) {
        g.record("cross_entropy", {logits.id()}, out,
                 [logits, target, mask = std::move(mask), lse, c](const Tensor<T>& o) mutable {
                     const T go = o.grad()[0];
                     auto gz = logits.grad();
                     auto zv = logits.data();
                     for (std::size_t j = 0; j < c; ++j) {
                         if (mask[j]) continue;
                         gz[j] += go * std::exp(zv[j] - lse);
                     }
                     gz[target] -= go;
                 });
    }
    return out;
}

template <typename T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& x) {
    T total = 0;
    for (T v : x.data()) total += v;
    auto out = Tensor<T>::scalar(total);
    if (g.tracks(x)) {
        g.record("sum", {x.id()}, out, [x](const Tensor<T>& o) mutable {
            const T go = o.grad()[0];
            for (auto& v : x.grad()) v += go;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(Graph<T>& g, const Tensor<T>& x) {
    return scale(g, sum(g, x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> col_sums(Graph<T>& g, const Tensor<T>& x) {
    require_rank2(x, "col_sums");
    const std::size_t m = x.rows(), n = x.cols();
    Tensor<T> out({1, n});
    auto xv = x.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ov[j] += xv[i * n + j];
    if (g.tracks(x)) {
        g.record("col_sums", {x.id()}, out, [x, m, n](const Tensor<T>& o) mutable {
            auto go = o.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += go[j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> div_rows(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& den, T floor) {
    require_rank2(x, "div_rows");
    const std::size_t m = x.rows(), n = x.cols();
    if (den.numel() != m) {
        throw DimensionError("div_rows: denominator " + shape_str(den.shape()) + " vs " + shape_str(x.shape()));
    }
    Tensor<T> out(x.shape());
    auto xv = x.data(), dv = den.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        const T d = std::max(dv[i], floor);
        for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = xv[i * n + j] / d;
    }
    if (g.tracks(x, den)) {
        g.record("div_rows", {x.id(), den.id()}, out, [x, den, m, n, floor](const Tensor<T>& o) mutable {
            auto go = o.grad();
            auto xv = x.data(), dv = den.data();
            for (std::size_t i = 0; i < m; ++i) {
                const bool clamped = dv[i] < floor;
                const T d = clamped ? floor : dv[i];
                if (x.requires_grad()) {
                    auto gx = x.grad();
                    for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += go[i * n + j] / d;
                }
                if (den.requires_grad() && !clamped) {
                    T acc = 0;
                    for (std::size_t j = 0; j < n; ++j) acc += go[i * n + j] * xv[i * n + j];
                    den.grad()[i] -= acc / (d * d);
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> rms_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift, T eps) {
    require_rank2(x, "rms_norm");
    const std::size_t m = x.rows(), n = x.cols();
    if (scale.numel() != n || shift.numel() != n) {
        throw DimensionError("rms_norm: scale/shift must have " + std::to_string(n) + " entries");
    }
    Tensor<T> out(x.shape());
    std::vector<T> inv_rms(m);
    auto xv = x.data(), sv = scale.data(), bv = shift.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        T ss = 0;
        for (std::size_t j = 0; j < n; ++j) ss += xv[i * n + j] * xv[i * n + j];
        inv_rms[i] = T(1) / std::sqrt(ss / static_cast<T>(n) + eps);
        for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = xv[i * n + j] * inv_rms[i] * sv[j] + bv[j];
    }
    if (g.tracks(x, scale, shift)) {
        g.record("rms_norm", {x.id(), scale.id(), shift.id()}, out,
                 [x, scale, shift, inv_rms = std::move(inv_rms), m, n](const Tensor<T>& o) mutable {
                     auto go = o.grad();
                     auto xv = x.data(), sv = scale.data();
                     std::vector<T> dxhat(n);
                     for (std::size_t i = 0; i < m; ++i) {
                         const T r = inv_rms[i];
                         T dot = 0;
                         for (std::size_t j = 0; j < n; ++j) {
                             const T xhat = xv[i * n + j] * r;
                             const T gy = go[i * n + j];
                             if (scale.requires_grad()) scale.grad()[j] += gy * xhat;
                             if (shift.requires_grad()) shift.grad()[j] += gy;
                             dxhat[j] = gy * sv[j];
                             dot += dxhat[j] * xhat;
                         }
                         if (!x.requires_grad()) continue;
                         auto gx = x.grad();
                         const T mean_dot = dot / static_cast<T>(n);
                         for (std::size_t j = 0; j < n; ++j) {
                             const T xhat = xv[i * n + j] * r;
                             gx[i * n + j] += (dxhat[j] - xhat * mean_dot) * r;
                         }
                     }
                 });
    }
    return out;
}

// ---- layout ------------------------------------------------------------------

template <typename T>
Tensor<T> gather_rows(Graph<T>& g, const Tensor<T>& table, std::span<const std::size_t> indices) {
    require_rank2(table, "gather_rows");
    const std::size_t rows = table.rows(), n = table.cols();
    for (auto i : indices) {
        if (i >= rows) {
            throw IndexError("gather_rows: index " + std::to_string(i) + " >= " + std::to_string(rows));
        }
    }
    Tensor<T> out({indices.size(), n});
    auto tv = table.data();
    auto ov = out.data();
    for (std::size_t r = 0; r < indices.size(); ++r)
        std::copy_n(tv.data() + indices[r] * n, n, ov.data() + r * n);
    if (g.tracks(table)) {
        std::vector<std::size_t> idx(indices.begin(), indices.end());
        g.record("gather_rows", {table.id()}, out, [table, idx = std::move(idx), n](const Tensor<T>& o) mutable {
            auto go = o.grad();
            auto gt = table.grad();
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < n; ++j) gt[idx[r] * n + j] += go[r * n + j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> row(Graph<T>& g, const Tensor<T>& x, std::size_t i) {
    const std::size_t idx[1] = {i};
    return gather_rows(g, x, std::span<const std::size_t>(idx, 1));
}

template <typename T>
Tensor<T> concat_cols(Graph<T>& g, std::span<const Tensor<T>> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
        n += p.cols();
    }
    Tensor<T> out({m, n});
    auto ov = out.data();
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p.cols();
        auto pv = p.data();
        for (std::size_t i = 0; i < m; ++i) std::copy_n(pv.data() + i * pc, pc, ov.data() + i * n + offset);
        offset += pc;
    }
    if (g.tracks_any(parts)) {
        std::vector<Tensor<T>> keep(parts.begin(), parts.end());
        std::vector<const void*> ids;
        for (const auto& p : parts) ids.push_back(p.id());
        g.record("concat_cols", std::move(ids), out, [keep = std::move(keep), m, n](const Tensor<T>& o) mutable {
            auto go = o.grad();
            std::size_t offset = 0;
            for (auto& p : keep) {
                const std::size_t pc = p.cols();
                if (p.requires_grad()) {
                    auto gp = p.grad();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += go[i * n + offset + j];
                }
                offset += pc;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_cols(Graph<T>& g, const Tensor<T>& x, std::size_t start, std::size_t count) {
    require_rank2(x, "slice_cols");
    const std::size_t m = x.rows(), n = x.cols();
    if (start + count > n) throw IndexError("slice_cols: columns out of range");
    Tensor<T> out({m, count});
    auto xv = x.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(xv.data() + i * n + start, count, ov.data() + i * count);
    if (g.tracks(x)) {
        g.record("slice_cols", {x.id()}, out, [x, m, n, start, count](const Tensor<T>& o) mutable {
            auto go = o.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < count; ++j) gx[i * n + start + j] += go[i * count + j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> reverse_rows(Graph<T>& g, const Tensor<T>& x) {
    require_rank2(x, "reverse_rows");
    const std::size_t m = x.rows(), n = x.cols();
    Tensor<T> out(x.shape());
    auto xv = x.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(xv.data() + (m - 1 - i) * n, n, ov.data() + i * n);
    if (g.tracks(x)) {
        g.record("reverse_rows", {x.id()}, out, [x, m, n](const Tensor<T>& o) mutable {
            auto go = o.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gx[(m - 1 - i) * n + j] += go[i * n + j];
        });
    }
    return out;
}

// ---- sequence ops ------------------------------------------------------------

template <typename T>
Tensor<T> depthwise_conv1d(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& kernel, bool causal) {
    require_rank2(x, "depthwise_conv1d");
    require_rank2(kernel, "depthwise_conv1d");
    const std::size_t len = x.rows(), d = x.cols(), w = kernel.rows();
    if (w == 0) throw ConfigError("depthwise_conv1d: kernel width must be >= 1");
    if (kernel.cols() != d) {
        throw DimensionError("depthwise_conv1d: kernel " + shape_str(kernel.shape()) + " vs input " +
                             shape_str(x.shape()));
    }
    if (!causal && w % 2 == 0) {
        throw ConfigError("depthwise_conv1d: non-causal 'same' padding needs an odd kernel width, got " +
                          std::to_string(w));
    }
    const std::ptrdiff_t offset = causal ? 0 : static_cast<std::ptrdiff_t>((w - 1) / 2);
    const auto L = static_cast<std::ptrdiff_t>(len);
    Tensor<T> out(x.shape());
    auto xv = x.data(), kv = kernel.data();
    auto ov = out.data();
    for (std::ptrdiff_t t = 0; t < L; ++t) {
        T* o = ov.data() + t * d;
        for (std::size_t i = 0; i < w; ++i) {
            const std::ptrdiff_t src = t + offset - static_cast<std::ptrdiff_t>(i);
            if (src < 0 || src >= L) continue;
            const T* xr = xv.data() + src * d;
            const T* kr = kv.data() + i * d;
            for (std::size_t c = 0; c < d; ++c) o[c] += kr[c] * xr[c];
        }
    }
    if (g.tracks(x, kernel)) {
        g.record("depthwise_conv1d", {x.id(), kernel.id()}, out,
                 [x, kernel, L, d, w, offset](const Tensor<T>& o) mutable {
                     auto go = o.grad();
                     auto xv = x.data(), kv = kernel.data();
                     for (std::ptrdiff_t t = 0; t < L; ++t) {
                         const T* dy = go.data() + t * d;
                         for (std::size_t i = 0; i < w; ++i) {
                             const std::ptrdiff_t src = t + offset - static_cast<std::ptrdiff_t>(i);
                             if (src < 0 || src >= L) continue;
                             if (x.requires_grad()) {
                                 T* dx = x.grad().data() + src * d;
                                 const T* kr = kv.data() + i * d;
                                 for (std::size_t c = 0; c < d; ++c) dx[c] += kr[c] * dy[c];
                             }
                             if (kernel.requires_grad()) {
                                 T* dk = kernel.grad().data() + i * d;
                                 const T* xr = xv.data() + src * d;
                                 for (std::size_t c = 0; c < d; ++c) dk[c] += xr[c] * dy[c];
                             }
                         }
                     }
                 });
    }
    return out;
}

template <typename T>
Tensor<T> segment_pool(Graph<T>& g, const Tensor<T>& x, std::size_t width, PoolMethod method) {
    require_rank2(x, "segment_pool");
    if (width == 0) throw ConfigError("segment_pool: width must be >= 1");
    const std::size_t len = x.rows(), d = x.cols();
    const std::size_t segs = (len + width - 1) / width;
    Tensor<T> out({segs, d});
    std::vector<std::size_t> argmax;
    if (method == PoolMethod::max) argmax.assign(segs * d, 0);
    auto xv = x.data();
    auto ov = out.data();
    for (std::size_t s = 0; s < segs; ++s) {
        const std::size_t lo = s * width, hi = std::min(len, lo + width);
        T* o = ov.data() + s * d;
        if (method == PoolMethod::mean) {
            for (std::size_t t = lo; t < hi; ++t)
                for (std::size_t c = 0; c < d; ++c) o[c] += xv[t * d + c];
            const T inv = T(1) / static_cast<T>(hi - lo);
            for (std::size_t c = 0; c < d; ++c) o[c] *= inv;
        } else {
            for (std::size_t c = 0; c < d; ++c) {
                std::size_t best = lo;
                for (std::size_t t = lo + 1; t < hi; ++t)
                    if (xv[t * d + c] > xv[best * d + c]) best = t;
                o[c] = xv[best * d + c];
                argmax[s * d + c] = best;
            }
        }
    }
    if (g.tracks(x)) {
        g.record("segment_pool", {x.id()}, out,
                 [x, width, method, argmax = std::move(argmax), segs, len, d](const Tensor<T>& o) mutable {
                     auto go = o.grad();
                     auto gx = x.grad();
                     for (std::size_t s = 0; s < segs; ++s) {
                         const std::size_t lo = s * width, hi = std::min(len, lo + width);
                         if (method == PoolMethod::mean) {
                             const T inv = T(1) / static_cast<T>(hi - lo);
                             for (std::size_t t = lo; t < hi; ++t)
                                 for (std::size_t c = 0; c < d; ++c) gx[t * d + c] += go[s * d + c] * inv;
                         } else {
                             for (std::size_t c = 0; c < d; ++c) gx[argmax[s * d + c] * d + c] += go[s * d + c];
                         }
                     }
                 });
    }
    return out;
}

#define FCI_INSTANTIATE_OPS(T)                                                                              \
    template Tensor<T> matmul(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> matmul_nt(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> matmul_tn(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> add(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> sub(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> mul(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> scale(Graph<T>&, const Tensor<T>&, T);                                               \
    template Tensor<T> add_bias(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> silu(Graph<T>&, const Tensor<T>&);                                                   \
    template Tensor<T> sigmoid(Graph<T>&, const Tensor<T>&);                                                \
    template Tensor<T> softplus(Graph<T>&, const Tensor<T>&);                                               \
    template Tensor<T> exp(Graph<T>&, const Tensor<T>&);                                                    \
    template Tensor<T> elu_plus_one(Graph<T>&, const Tensor<T>&);                                           \
    template Tensor<T> softmax_rows(Graph<T>&, const Tensor<T>&, bool);                                     \
    template Tensor<T> cross_entropy(Graph<T>&, const Tensor<T>&, std::size_t, std::span<const std::size_t>); \
    template Tensor<T> sum(Graph<T>&, const Tensor<T>&);                                                    \
    template Tensor<T> mean(Graph<T>&, const Tensor<T>&);                                                   \
    template Tensor<T> col_sums(Graph<T>&, const Tensor<T>&);                                               \
    template Tensor<T> div_rows(Graph<T>&, const Tensor<T>&, const Tensor<T>&, T);                          \
    template Tensor<T> rms_norm(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
    template Tensor<T> gather_rows(Graph<T>&, const Tensor<T>&, std::span<const std::size_t>);              \
    template Tensor<T> row(Graph<T>&, const Tensor<T>&, std::size_t);                                       \
    template Tensor<T> concat_cols(Graph<T>&, std::span<const Tensor<T>>);                                  \
    template Tensor<T> slice_cols(Graph<T>&, const Tensor<T>&, std::size_t, std::size_t);                   \
    template Tensor<T> reverse_rows(Graph<T>&, const Tensor<T>&);                                           \
    template Tensor<T> depthwise_conv1d(Graph<T>&, const Tensor<T>&, const Tensor<T>&, bool);               \
    template Tensor<T> segment_pool(Graph<T>&, const Tensor<T>&, std::size_t, PoolMethod);

FCI_INSTANTIATE_OPS(float)
FCI_INSTANTIATE_OPS(double)

}  // namespace fci::ops
