#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fci/params.hpp"

namespace fci::optim {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

template <typename T>
struct AdamMoments {
    std::vector<T> m, v;
    std::size_t step = 0;
};

/// One AdamW update with bias correction and decoupled decay:
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p
/// where the decay term uses the pre-update p.
template <typename T>
void adamw_step(std::span<T> param, std::span<const T> grad, AdamMoments<T>& state, double lr,
                const AdamWConfig& cfg, bool decay = true);

/// AdamW over a ParamSet. Entries that do not require grad are skipped.
template <typename T>
class AdamW {
  public:
    AdamW(ParamSet<T>& params, AdamWConfig cfg = {});
    void step(double lr);
    const AdamWConfig& config() const noexcept { return cfg_; }

  private:
    ParamSet<T>& params_;
    AdamWConfig cfg_;
    std::vector<AdamMoments<T>> moments_;
};

struct OneCycleConfig {
    double max_lr = 3e-3;
    double pct_start = 0.3;
    double div = 25.0;
    double final_div = 1e4;
};

/// Linear warm-up from max_lr/div to max_lr over pct_start * total steps, then
/// cosine annealing to max_lr/final_div at step == total.
double onecycle_lr(std::size_t step, std::size_t total, const OneCycleConfig& cfg);

/// 1 - 0.9 * epoch / (epochs - 1); a single-epoch run keeps weight 1.
double route_weight(std::size_t epoch, std::size_t epochs);

}  // namespace fci::optim
