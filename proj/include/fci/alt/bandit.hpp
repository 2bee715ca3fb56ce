#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

#include "fci/params.hpp"

namespace fci::alt {

/// Ridge sufficient statistics shared by LinUCB, OFUL and linear Thompson
/// sampling. A starts at lambda * I and only receives rank-1 PSD updates, so it
/// stays symmetric positive definite.
class LinearBanditState {
  public:
    explicit LinearBanditState(std::size_t dim, double lambda = 1.0);

    std::size_t dim() const noexcept { return static_cast<std::size_t>(b_.size()); }
    double lambda() const noexcept { return lambda_; }
    std::size_t updates() const noexcept { return updates_; }
    const Eigen::MatrixXd& design() const noexcept { return a_; }
    const Eigen::VectorXd& response() const noexcept { return b_; }

    /// theta = A^{-1} b
    Eigen::VectorXd theta() const;
    Eigen::MatrixXd inverse() const;
    /// A += x x^T, b += r x
    void update(const Eigen::VectorXd& x, double reward);
    bool positive_definite() const;

  private:
    Eigen::MatrixXd a_;
    Eigen::VectorXd b_;
    double lambda_;
    std::size_t updates_ = 0;
};

/// Contexts hold one arm per row.
using Contexts = Eigen::MatrixXd;

/// theta^T x + width * sqrt(x^T A^{-1} x) per arm.
std::vector<double> optimistic_scores(const LinearBanditState& state, const Contexts& contexts, double width);

/// Indices of the `k` best arms, descending score, ties to the lower index.
std::vector<std::size_t> top_arms(const std::vector<double>& scores, std::size_t k);

struct OfulParams {
    double delta = 0.1;
    double norm_bound = 1.0;  // S
};

/// beta_t = sqrt(lambda) S + sqrt(2 ln(1/delta) + d ln(1 + t / (lambda d))), t = updates so far.
double oful_beta(const LinearBanditState& state, const OfulParams& params);

std::vector<double> linucb_scores(const LinearBanditState& state, const Contexts& contexts, double alpha);
std::vector<double> oful_scores(const LinearBanditState& state, const Contexts& contexts, const OfulParams& params);

/// Draw from N(A^{-1} b, sigma2 A^{-1}).
Eigen::VectorXd thompson_sample(const LinearBanditState& state, double sigma2, Rng& rng);
std::vector<double> thompson_scores(const LinearBanditState& state, const Contexts& contexts, double sigma2,
                                    Rng& rng);

/// Choose the best arm, observe its reward through `reward(arm)`, update.
template <typename RewardFn>
std::size_t linucb_step(LinearBanditState& state, const Contexts& contexts, double alpha, RewardFn&& reward) {
    const std::size_t arm = top_arms(linucb_scores(state, contexts, alpha), 1).front();
    state.update(contexts.row(static_cast<Eigen::Index>(arm)).transpose(), reward(arm));
    return arm;
}

template <typename RewardFn>
std::size_t oful_step(LinearBanditState& state, const Contexts& contexts, const OfulParams& params,
                      RewardFn&& reward) {
    const std::size_t arm = top_arms(oful_scores(state, contexts, params), 1).front();
    state.update(contexts.row(static_cast<Eigen::Index>(arm)).transpose(), reward(arm));
    return arm;
}

template <typename RewardFn>
std::size_t thompson_step(LinearBanditState& state, const Contexts& contexts, double sigma2, Rng& rng,
                          RewardFn&& reward) {
    const std::size_t arm = top_arms(thompson_scores(state, contexts, sigma2, rng), 1).front();
    state.update(contexts.row(static_cast<Eigen::Index>(arm)).transpose(), reward(arm));
    return arm;
}

}  // namespace fci::alt
