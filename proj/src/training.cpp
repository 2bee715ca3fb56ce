#include "fci/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fci/errors.hpp"

namespace fci::training {

void TrainConfig::validate() const {
    if (n_train == 0) throw ConfigError("TrainConfig: n_train must be >= 1");
    if (batch == 0 || batch > n_train) throw ConfigError("TrainConfig: batch must be in [1, n_train]");
    if (n_eval == 0) throw ConfigError("TrainConfig: n_eval must be >= 1");
    if (schedule.max_lr <= 0 || schedule.div <= 0 || schedule.final_div <= 0)
        throw ConfigError("TrainConfig: schedule values must be positive");
    if (schedule.pct_start < 0 || schedule.pct_start > 1) throw ConfigError("TrainConfig: pct_start outside [0, 1]");
}

namespace {

router::Selection external_selection(model::SelectionSource* src, const tasks::Sample& s, std::size_t index,
                                     bool training) {
    return src->select(s, index, training);
}

}  // namespace

EvalResult evaluate(const model::FciModel& model, const tasks::SequenceBatch& data, model::SelectionSource* external) {
    EvalResult r;
    if (data.samples.empty()) return r;
    std::size_t hit = 0, hit_expanded = 0, correct = 0;
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        const auto& s = data.samples[i];
        Graph<float> g(false);
        router::Selection ext;
        if (external) ext = external_selection(external, s, i, false);
        const auto out = model.forward(g, s, external ? &ext : nullptr);
        hit += out.routed_to_gold;
        hit_expanded += out.selection.contains_expanded(s.key_pos);
        correct += tasks::value_token(out.prediction) == s.value;
        r.predictions.push_back(out.prediction);
    }
    const double n = double(data.samples.size());
    r.routing_precision = double(hit) / n;
    r.expanded_precision = double(hit_expanded) / n;
    r.task_accuracy = double(correct) / n;
    return r;
}

TrainResult train(model::FciModel& model, const tasks::SequenceBatch& train_set, const tasks::SequenceBatch& eval_set,
                  const TrainConfig& cfg, model::SelectionSource* external, const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_set.samples.size() < cfg.n_train)
        throw ConfigError("train: dataset has " + std::to_string(train_set.samples.size()) + " samples, config needs " +
                          std::to_string(cfg.n_train));
    if (eval_set.kind != train_set.kind) throw ContractError("train: train and eval tasks differ");

    TrainResult result;
    if (cfg.epochs == 0) return result;
    auto& params = model.params();
    optim::AdamW<float> opt(params, cfg.adamw);
    const std::size_t total = cfg.total_steps();
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double w_route = optim::route_weight(epoch, cfg.epochs);
        std::vector<std::size_t> order(cfg.n_train);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.seed, 0x5F0000 + epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double sum_task = 0, sum_route = 0, sum_total = 0;
        std::size_t n_route = 0;
        double lr = 0;
        for (std::size_t start = 0; start < cfg.n_train; start += cfg.batch) {
            const std::size_t end = std::min(cfg.n_train, start + cfg.batch);
            const float scale = 1.0f / float(end - start);
            params.zero_grad();
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t idx = order[b];
                const auto& s = train_set.samples[idx];
                Graph<float> g;
                router::Selection ext;
                if (external) ext = external_selection(external, s, idx, true);
                auto out = model.forward(g, s, external ? &ext : nullptr);
                auto loss = out.task_loss;
                double route_value = 0;
                if (out.route_loss.defined()) {
                    route_value = out.route_loss.item();
                    loss = ops::add(g, loss, ops::scale(g, out.route_loss, float(w_route)));
                    ++n_route;
                }
                const double task_value = out.task_loss.item();
                const double total_value = loss.item();
                if (!std::isfinite(total_value)) {
                    std::ostringstream why;
                    why << "non-finite loss at epoch " << epoch << ", step " << step << ", sample " << idx
                        << " (task " << task_value << ", routing " << route_value << ")";
                    result.aborted = true;
                    result.abort_reason = why.str();
                    return result;
                }
                sum_task += task_value;
                sum_route += route_value;
                sum_total += total_value;
                if (loss.requires_grad()) backward(g, ops::scale(g, loss, scale));
            }
            lr = optim::onecycle_lr(step, total > 0 ? total - 1 : 0, cfg.schedule);
            opt.step(lr);
            ++step;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        const double n = double(cfg.n_train);
        rec.task_loss = sum_task / n;
        rec.routing_loss = n_route ? sum_route / double(n_route) : 0.0;
        rec.total_loss = sum_total / n;
        rec.learning_rate = lr;
        rec.route_weight = w_route;
        tasks::SequenceBatch held{eval_set.kind, eval_set.length, eval_set.seed,
                                  {eval_set.samples.begin(),
                                   eval_set.samples.begin() + long(std::min(cfg.n_eval, eval_set.samples.size()))}};
        const auto ev = evaluate(model, held, external);
        rec.routing_precision = ev.routing_precision;
        rec.expanded_precision = ev.expanded_precision;
        rec.task_accuracy = ev.task_accuracy;
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

}  // namespace fci::training
