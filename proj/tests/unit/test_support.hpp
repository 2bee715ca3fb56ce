#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fci/ops.hpp"
#include "fci/params.hpp"
#include "fci/tensor.hpp"

namespace fci::testing {

using TensorD = Tensor<double>;
using GraphD = Graph<double>;

inline TensorD random_d(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = true) {
    return normal_tensor<double>(std::move(shape), stddev, rng, requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

/// Reduces an arbitrary output to a scalar through a fixed random weighting, so
/// every output element contributes a distinct gradient.
inline TensorD weighted_sum(GraphD& g, const TensorD& out, std::uint64_t seed = 99) {
    Rng rng(seed);
    auto w = random_d(out.shape(), rng, 1.0, false);
    return ops::sum(g, ops::mul(g, out, w));
}

/// Largest relative error between backward() and central differences over all
/// leaves, measured as ||analytic - numeric|| / max(||numeric||, 1e-8) per leaf.
inline double gradcheck(const std::function<TensorD(GraphD&)>& loss_fn, std::vector<TensorD> leaves,
                        double h = 1e-5) {
    for (auto& l : leaves) l.zero_grad();
    {
        GraphD g;
        auto loss = loss_fn(g);
        backward(g, loss);
    }
    double worst = 0;
    for (auto& leaf : leaves) {
        std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
        std::vector<double> numeric(leaf.numel());
        for (std::size_t i = 0; i < leaf.numel(); ++i) {
            const double orig = leaf[i];
            GraphD off(false);
            leaf[i] = orig + h;
            const double up = loss_fn(off).item();
            leaf[i] = orig - h;
            const double down = loss_fn(off).item();
            leaf[i] = orig;
            numeric[i] = (up - down) / (2 * h);
        }
        double diff = 0, norm = 0;
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
            norm += numeric[i] * numeric[i];
        }
        worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(norm), 1e-8));
    }
    return worst;
}

}  // namespace fci::testing
