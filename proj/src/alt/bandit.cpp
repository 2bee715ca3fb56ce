#include "fci/alt/bandit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fci/errors.hpp"

namespace fci::alt {

LinearBanditState::LinearBanditState(std::size_t dim, double lambda)
    : a_(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim)) * lambda),
      b_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim))),
      lambda_(lambda) {
    if (dim == 0) throw ConfigError("bandit: context dimension must be >= 1");
    if (!(lambda > 0)) throw ConfigError("bandit: lambda must be > 0");
}

Eigen::VectorXd LinearBanditState::theta() const { return a_.llt().solve(b_); }

Eigen::MatrixXd LinearBanditState::inverse() const {
    return a_.llt().solve(Eigen::MatrixXd::Identity(a_.rows(), a_.cols()));
}

void LinearBanditState::update(const Eigen::VectorXd& x, double reward) {
    if (x.size() != b_.size()) throw DimensionError("bandit: context has wrong dimension");
    a_.noalias() += x * x.transpose();
    b_.noalias() += reward * x;
    ++updates_;
}

bool LinearBanditState::positive_definite() const {
    if (!a_.isApprox(a_.transpose(), 1e-12)) return false;
    return a_.llt().info() == Eigen::Success;
}

std::vector<double> optimistic_scores(const LinearBanditState& state, const Contexts& contexts, double width) {
    if (static_cast<std::size_t>(contexts.cols()) != state.dim()) {
        throw DimensionError("bandit: contexts have " + std::to_string(contexts.cols()) + " columns, expected " +
                             std::to_string(state.dim()));
    }
    const Eigen::VectorXd mean = contexts * state.theta();
    std::vector<double> out(static_cast<std::size_t>(contexts.rows()));
    if (width == 0) {
        for (Eigen::Index i = 0; i < contexts.rows(); ++i) out[static_cast<std::size_t>(i)] = mean(i);
        return out;
    }
    const Eigen::MatrixXd xa = contexts * state.inverse();
    for (Eigen::Index i = 0; i < contexts.rows(); ++i) {
        const double quad = std::max(0.0, xa.row(i).dot(contexts.row(i)));
        out[static_cast<std::size_t>(i)] = mean(i) + width * std::sqrt(quad);
    }
    return out;
}

std::vector<std::size_t> top_arms(const std::vector<double>& scores, std::size_t k) {
    if (k == 0 || k > scores.size()) throw ConfigError("bandit: cannot choose " + std::to_string(k) + " arms");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    idx.resize(k);
    return idx;
}

double oful_beta(const LinearBanditState& state, const OfulParams& params) {
    const double d = static_cast<double>(state.dim()), lambda = state.lambda();
    const double t = static_cast<double>(state.updates());
    return std::sqrt(lambda) * params.norm_bound +
           std::sqrt(2.0 * std::log(1.0 / params.delta) + d * std::log(1.0 + t / (lambda * d)));
}

std::vector<double> linucb_scores(const LinearBanditState& state, const Contexts& contexts, double alpha) {
    return optimistic_scores(state, contexts, alpha);
}

std::vector<double> oful_scores(const LinearBanditState& state, const Contexts& contexts, const OfulParams& params) {
    return optimistic_scores(state, contexts, oful_beta(state, params));
}

Eigen::VectorXd thompson_sample(const LinearBanditState& state, double sigma2, Rng& rng) {
    const Eigen::VectorXd mean = state.theta();
    if (sigma2 <= 0) return mean;
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = nd(rng);
    // A = L L^T, so L^{-T} z has covariance A^{-1}
    Eigen::LLT<Eigen::MatrixXd> llt(state.design());
    const Eigen::VectorXd noise = llt.matrixU().solve(z);
    return mean + std::sqrt(sigma2) * noise;
}

std::vector<double> thompson_scores(const LinearBanditState& state, const Contexts& contexts, double sigma2,
                                    Rng& rng) {
    if (static_cast<std::size_t>(contexts.cols()) != state.dim()) throw DimensionError("bandit: context width");
    const Eigen::VectorXd sample = thompson_sample(state, sigma2, rng);
    const Eigen::VectorXd s = contexts * sample;
    return {s.data(), s.data() + s.size()};
}

}  // namespace fci::alt
