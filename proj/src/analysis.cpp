#include "fci/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fci/errors.hpp"

namespace fci::analysis {

double routing_precision(const std::vector<std::vector<std::size_t>>& selections, std::span<const std::size_t> gold) {
    if (selections.size() != gold.size())
        throw ContractError("routing_precision: " + std::to_string(selections.size()) + " selections for " +
                            std::to_string(gold.size()) + " gold keys");
    if (gold.empty()) throw ContractError("routing_precision: no sequences");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < gold.size(); ++i)
        hit += std::find(selections[i].begin(), selections[i].end(), gold[i]) != selections[i].end();
    return double(hit) / double(gold.size());
}

double task_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> gold) {
    if (predictions.size() != gold.size())
        throw ContractError("task_accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                            std::to_string(gold.size()) + " targets");
    if (gold.empty()) throw ContractError("task_accuracy: no sequences");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) hit += predictions[i] == gold[i];
    return double(hit) / double(gold.size());
}

namespace {

template <typename T>
double norm_of_row(const Tensor<T>& m, std::size_t r) {
    double s = 0;
    for (std::size_t c = 0; c < m.cols(); ++c) s += double(m.at(r, c)) * double(m.at(r, c));
    return std::sqrt(s);
}

template <typename T>
double dot_rows(const Tensor<T>& m, std::size_t a, std::size_t b) {
    double s = 0;
    for (std::size_t c = 0; c < m.cols(); ++c) s += double(m.at(a, c)) * double(m.at(b, c));
    return s;
}

}  // namespace

template <typename T>
CosineGapReport cosine_gap(const std::vector<Tensor<T>>& reps, std::span<const std::size_t> query,
                           std::span<const std::size_t> answer, Rng& rng, std::size_t baseline_samples) {
    if (reps.size() != query.size() || reps.size() != answer.size())
        throw ContractError("cosine_gap: representation, query and answer lists differ in length");
    if (baseline_samples == 0) throw ConfigError("cosine_gap: need at least one baseline sample");
    CosineGapReport rep;
    rep.baseline_samples = baseline_samples;
    double total = 0;
    for (std::size_t i = 0; i < reps.size(); ++i) {
        const auto& r = reps[i];
        const std::size_t q = query[i], a = answer[i], len = r.rows();
        if (q >= len || a >= len) throw IndexError("cosine_gap: position outside the sequence");
        const double nq = norm_of_row(r, q), na = norm_of_row(r, a);
        if (nq == 0 || na == 0) {
            ++rep.skipped;
            continue;
        }
        std::vector<std::size_t> pool;
        for (std::size_t j = 0; j < len; ++j)
            if (j != q && j != a) pool.push_back(j);
        const std::size_t m = std::min(baseline_samples, pool.size());
        for (std::size_t t = 0; t < m; ++t) {
            std::uniform_int_distribution<std::size_t> pick(t, pool.size() - 1);
            std::swap(pool[t], pool[pick(rng)]);
        }
        double base = 0;
        std::size_t used = 0;
        for (std::size_t t = 0; t < m; ++t) {
            const double nj = norm_of_row(r, pool[t]);
            if (nj == 0) {
                ++rep.skipped;
                continue;
            }
            base += dot_rows(r, q, pool[t]) / (nq * nj);
            ++used;
        }
        if (used == 0) continue;
        total += dot_rows(r, q, a) / (nq * na) - base / double(used);
        ++rep.sequences;
    }
    rep.gap = rep.sequences ? total / double(rep.sequences) : 0.0;
    return rep;
}

SpectrumReport spectrum(const Eigen::MatrixXd& m, double threshold) {
    if (!(threshold > 0 && threshold <= 1)) throw ContractError("spectrum: threshold must lie in (0, 1]");
    if (!m.allFinite()) throw NumericError("spectrum: matrix has non-finite entries");
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
    if (svd.info() != Eigen::Success) throw NumericError("spectrum: SVD did not converge");
    const Eigen::VectorXd& s = svd.singularValues();
    SpectrumReport rep;
    rep.threshold = threshold;
    rep.singular_values.assign(s.data(), s.data() + s.size());
    const double total = s.squaredNorm();
    if (total == 0) throw ContractError("spectrum: zero matrix");
    double acc = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        acc += s(i) * s(i);
        rep.cumulative_energy.push_back(acc / total);
    }
    rep.cumulative_energy.back() = 1.0;  // absorb rounding in the running sum
    for (std::size_t i = 0; i < rep.cumulative_energy.size(); ++i)
        if (rep.cumulative_energy[i] >= threshold) {
            rep.effective_rank = i + 1;
            break;
        }
    return rep;
}

template <typename T>
Eigen::MatrixXd combined_routing_matrix(const router::RouterParams<T>& params) {
    const auto d = Eigen::Index(params.d_model());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t h = 0; h < params.heads; ++h) {
        const auto& wq = params.wq[h];
        const auto& wk = params.wk[h];
        Eigen::MatrixXd q(d, Eigen::Index(wq.cols())), k(d, Eigen::Index(wk.cols()));
        for (Eigen::Index r = 0; r < d; ++r)
            for (Eigen::Index c = 0; c < q.cols(); ++c) {
                q(r, c) = double(wq.at(std::size_t(r), std::size_t(c)));
                k(r, c) = double(wk.at(std::size_t(r), std::size_t(c)));
            }
        m += q * k.transpose();
    }
    return m;
}

template <typename T>
SpectrumReport svd_energy_rank(const router::RouterParams<T>& params, double threshold) {
    return spectrum(combined_routing_matrix(params), threshold);
}

std::optional<std::size_t> detect_phase_transition(std::span<const double> p, double jump, double level) {
    if (p.empty()) throw ContractError("detect_phase_transition: empty history");
    for (std::size_t e = 1; e < p.size(); ++e)
        if (p[e] - p[e - 1] >= jump && p[e] >= level) return e;
    return std::nullopt;
}

template CosineGapReport cosine_gap(const std::vector<Tensor<float>>&, std::span<const std::size_t>,
                                    std::span<const std::size_t>, Rng&, std::size_t);
template CosineGapReport cosine_gap(const std::vector<Tensor<double>>&, std::span<const std::size_t>,
                                    std::span<const std::size_t>, Rng&, std::size_t);
template SpectrumReport svd_energy_rank(const router::RouterParams<float>&, double);
template SpectrumReport svd_energy_rank(const router::RouterParams<double>&, double);
template Eigen::MatrixXd combined_routing_matrix(const router::RouterParams<float>&);
template Eigen::MatrixXd combined_routing_matrix(const router::RouterParams<double>&);

}  // namespace fci::analysis
