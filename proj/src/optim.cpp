#include "fci/optim.hpp"

#include <cmath>
#include <numbers>

#include "fci/errors.hpp"

namespace fci::optim {

template <typename T>
void adamw_step(std::span<T> param, std::span<const T> grad, AdamMoments<T>& state, double lr,
                const AdamWConfig& cfg, bool decay) {
    if (param.size() != grad.size()) throw DimensionError("adamw_step: parameter and gradient sizes differ");
    if (state.m.empty()) {
        state.m.assign(param.size(), T(0));
        state.v.assign(param.size(), T(0));
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const double wd = decay ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        const double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        const double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = static_cast<T>(m);
        state.v[i] = static_cast<T>(v);
        const double p = param[i];
        const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
        param[i] = static_cast<T>(p - lr * update - lr * wd * p);
    }
}

template <typename T>
AdamW<T>::AdamW(ParamSet<T>& params, AdamWConfig cfg) : params_(params), cfg_(cfg), moments_(params.size()) {}

template <typename T>
void AdamW<T>::step(double lr) {
    if (moments_.size() != params_.size()) moments_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& e = params_[i];
        if (!e.tensor.requires_grad()) continue;
        if (!e.tensor.has_grad()) e.tensor.grad();  // untouched this step: zero gradient, decay still applies
        const auto& t = e.tensor;
        adamw_step<T>(e.tensor.data(), std::span<const T>(t.grad()), moments_[i], lr, cfg_, e.decay);
    }
}

double onecycle_lr(std::size_t step, std::size_t total, const OneCycleConfig& cfg) {
    if (step > total) throw ContractError("onecycle_lr: step beyond schedule");
    const double initial = cfg.max_lr / cfg.div;
    const double final_lr = cfg.max_lr / cfg.final_div;
    if (total == 0) return initial;
    const double warm = cfg.pct_start * static_cast<double>(total);
    const double s = static_cast<double>(step);
    if (s <= warm && warm > 0) return initial + (cfg.max_lr - initial) * s / warm;
    const double progress = (s - warm) / (static_cast<double>(total) - warm);
    return final_lr + (cfg.max_lr - final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double route_weight(std::size_t epoch, std::size_t epochs) {
    if (epochs == 0 || epoch >= epochs) throw ContractError("route_weight: epoch outside schedule");
    if (epochs == 1) return 1.0;
    return 1.0 - 0.9 * static_cast<double>(epoch) / static_cast<double>(epochs - 1);
}

template void adamw_step(std::span<float>, std::span<const float>, AdamMoments<float>&, double, const AdamWConfig&,
                         bool);
template void adamw_step(std::span<double>, std::span<const double>, AdamMoments<double>&, double,
                         const AdamWConfig&, bool);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace fci::optim
