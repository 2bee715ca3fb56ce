#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fci/model.hpp"
#include "fci/optim.hpp"
#include "fci/selection.hpp"
#include "fci/tasks.hpp"

namespace fci::training {

struct TrainConfig {
    std::size_t n_train = 8000;
    std::size_t batch = 32;
    std::size_t epochs = 40;
    std::size_t n_eval = 500;
    optim::OneCycleConfig schedule{};
    optim::AdamWConfig adamw{};
    std::uint64_t seed = 0;

    /// Throws ConfigError.
    void validate() const;
    std::size_t steps_per_epoch() const { return (n_train + batch - 1) / batch; }
    std::size_t total_steps() const { return epochs * steps_per_epoch(); }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double routing_precision = 0;  // held-out, pre-expansion
    double expanded_precision = 0;  // held-out, after neighbour expansion
    double task_accuracy = 0;       // held-out
    double total_loss = 0;          // training means over the epoch
    double routing_loss = 0;
    double task_loss = 0;
    double learning_rate = 0;  // at the last step of the epoch
    double route_weight = 0;

    bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    bool aborted = false;
    std::string abort_reason;
};

struct EvalResult {
    double routing_precision = 0;
    double expanded_precision = 0;
    double task_accuracy = 0;
    std::vector<std::size_t> predictions;
};

/// Held-out pass without gradient recording.
EvalResult evaluate(const model::FciModel& model, const tasks::SequenceBatch& data,
                    model::SelectionSource* external = nullptr);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch training: per sample, loss = task CE + route_weight(epoch) *
/// routing CE; the batch mean is minimised by AdamW under the one-cycle
/// schedule. Sample order is a per-epoch permutation derived from cfg.seed.
/// A non-finite loss stops training and is reported in the result.
TrainResult train(model::FciModel& model, const tasks::SequenceBatch& train_set,
                  const tasks::SequenceBatch& eval_set, const TrainConfig& cfg,
                  model::SelectionSource* external = nullptr, const EpochCallback& on_epoch = {});

}  // namespace fci::training
