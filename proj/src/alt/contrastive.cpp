#include "fci/alt/contrastive.hpp"

#include <algorithm>
#include <numeric>

#include "fci/optim.hpp"

namespace fci::alt {

template <typename T>
Tensor<T> segment_summary(Graph<T>& g, const Tensor<T>& reps, std::size_t width, ops::PoolMethod method) {
    return ops::segment_pool(g, reps, width, method);
}

template <typename T>
Tensor<T> infonce_from_similarities(Graph<T>& g, const Tensor<T>& sims, T tau) {
    if (!(tau > 0)) throw ConfigError("infonce: temperature must be > 0");
    return ops::cross_entropy(g, ops::scale(g, sims, T(1) / tau), 0);
}

template <typename T>
Tensor<T> infonce_loss(Graph<T>& g, const Tensor<T>& anchor, const Tensor<T>& positive, const Tensor<T>& negatives,
                       T tau) {
    if (anchor.numel() != positive.numel() || negatives.cols() != anchor.numel()) {
        throw DimensionError("infonce_loss: anchor, positive and negatives must share a width");
    }
    const Tensor<T> parts[] = {ops::matmul_nt(g, anchor, positive), ops::matmul_nt(g, anchor, negatives)};
    return infonce_from_similarities(g, ops::concat_cols(g, std::span<const Tensor<T>>(parts)), tau);
}

void ContrastiveConfig::validate() const {
    if (!(tau > 0)) throw ConfigError("ContrastiveConfig: tau must be > 0");
    if (negatives == 0) throw ConfigError("ContrastiveConfig: need at least one negative");
    if (batch == 0) throw ConfigError("ContrastiveConfig: batch must be >= 1");
}

ContrastiveResult contrastive_pretrain(const RepsSource& reps, const std::vector<ContrastivePair>& pairs,
                                       const router::RouterParams<float>& init, const ContrastiveConfig& config,
                                       ParamSet<float>* encoder) {
    config.validate();
    ContrastiveResult result{init.clone(), {}};
    ParamSet<float> trainable;
    result.params.collect(trainable, "router");
    if (config.finetune && encoder) {
        for (auto& e : *encoder) trainable.add("encoder." + e.name, e.tensor, e.decay);
    }
    optim::AdamW<float> opt(trainable);
    Rng rng(derive_seed(config.seed, 0xC0475A57ULL));
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch) {
            const std::size_t stop = std::min(order.size(), start + config.batch);
            trainable.zero_grad();
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t i = order[b];
                const auto& pair = pairs[i];
                Graph<float> g;
                auto x = reps(g, i);
                if (!config.finetune) x = x.detach();
                const std::size_t len = x.rows();
                std::vector<std::size_t> pool;
                for (std::size_t j = 0; j < len; ++j)
                    if (j != pair.anchor && j != pair.positive) pool.push_back(j);
                std::vector<std::size_t> cand{pair.positive};
                const std::size_t n_neg = std::min(config.negatives, pool.size());
                for (std::size_t n = 0; n < n_neg; ++n) {
                    std::uniform_int_distribution<std::size_t> pick(n, pool.size() - 1);
                    std::swap(pool[n], pool[pick(rng)]);
                    cand.push_back(pool[n]);
                }
                auto sims = router::routing_row_against(g, ops::row(g, x, pair.anchor), ops::gather_rows(g, x, cand),
                                                        result.params);
                auto loss = infonce_from_similarities(g, sims, static_cast<float>(config.tau));
                if (!loss.all_finite()) throw NumericError("contrastive_pretrain: non-finite loss");
                total += loss.item();
                backward(g, ops::scale(g, loss, 1.0f / static_cast<float>(stop - start)));
            }
            opt.step(config.lr);
        }
        result.epoch_loss.push_back(pairs.empty() ? 0.0 : total / static_cast<double>(pairs.size()));
    }
    return result;
}

template Tensor<float> segment_summary(Graph<float>&, const Tensor<float>&, std::size_t, ops::PoolMethod);
template Tensor<double> segment_summary(Graph<double>&, const Tensor<double>&, std::size_t, ops::PoolMethod);
template Tensor<float> infonce_loss(Graph<float>&, const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                    float);
template Tensor<double> infonce_loss(Graph<double>&, const Tensor<double>&, const Tensor<double>&,
                                     const Tensor<double>&, double);
template Tensor<float> infonce_from_similarities(Graph<float>&, const Tensor<float>&, float);
template Tensor<double> infonce_from_similarities(Graph<double>&, const Tensor<double>&, double);

}  // namespace fci::alt
