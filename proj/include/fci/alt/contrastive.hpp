#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "fci/ops.hpp"
#include "fci/params.hpp"
#include "fci/router.hpp"
#include "fci/tensor.hpp"

namespace fci::alt {

/// Mean or elementwise max over consecutive `width`-row segments.
template <typename T>
Tensor<T> segment_summary(Graph<T>& g, const Tensor<T>& reps, std::size_t width, ops::PoolMethod method);

/// -log(e^{s+/tau} / (e^{s+/tau} + sum e^{s-/tau})) with s = dot products of the
/// anchor with the positive and with each negative row.
template <typename T>
Tensor<T> infonce_loss(Graph<T>& g, const Tensor<T>& anchor, const Tensor<T>& positive, const Tensor<T>& negatives,
                       T tau);

/// Same loss from precomputed similarities, positive in column 0.
template <typename T>
Tensor<T> infonce_from_similarities(Graph<T>& g, const Tensor<T>& sims, T tau);

struct ContrastiveConfig {
    double tau = 0.1;
    std::size_t negatives = 32;
    std::size_t epochs = 5;
    std::size_t batch = 32;
    double lr = 3e-3;
    bool finetune = false;  // also update the encoder parameters
    std::uint64_t seed = 0;

    void validate() const;
};

struct ContrastivePair {
    std::size_t anchor = 0;
    std::size_t positive = 0;
};

/// Representations of training sequence `i`, built on the given graph.
using RepsSource = std::function<Tensor<float>(Graph<float>&, std::size_t)>;

struct ContrastiveResult {
    router::RouterParams<float> params;
    std::vector<double> epoch_loss;
};

/// Trains a copy of `init` so that the routing score of each anchor ranks its
/// positive above uniformly sampled negatives. `encoder` is updated only when
/// `config.finetune` is set; otherwise representations are detached.
ContrastiveResult contrastive_pretrain(const RepsSource& reps, const std::vector<ContrastivePair>& pairs,
                                       const router::RouterParams<float>& init, const ContrastiveConfig& config,
                                       ParamSet<float>* encoder = nullptr);

}  // namespace fci::alt
