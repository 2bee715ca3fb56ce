#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fci/params.hpp"
#include "fci/router.hpp"
#include "fci/tensor.hpp"

namespace fci::analysis {

/// Fraction of sequences whose selection contains the gold key.
/// Throws ContractError when the lists are empty or differ in length.
double routing_precision(const std::vector<std::vector<std::size_t>>& selections,
                         std::span<const std::size_t> gold);

/// Exact-match fraction.
double task_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> gold);

struct CosineGapReport {
    double gap = 0;                 // mean over the sequences used
    std::size_t sequences = 0;      // sequences that contributed
    std::size_t skipped = 0;        // zero vectors (query, answer or baseline) left out
    std::size_t baseline_samples = 16;
};

/// Per sequence cos(r_q, r_a) minus the mean cosine of r_q with up to 16
/// positions drawn without replacement from those other than q and a.
template <typename T>
CosineGapReport cosine_gap(const std::vector<Tensor<T>>& reps, std::span<const std::size_t> query,
                           std::span<const std::size_t> answer, Rng& rng, std::size_t baseline_samples = 16);

struct SpectrumReport {
    std::vector<double> singular_values;  // descending
    std::vector<double> cumulative_energy;  // share of sum sigma^2 up to index i
    double threshold = 0.9;
    std::size_t effective_rank = 0;  // min r with cumulative_energy[r - 1] >= threshold
};

/// Spectrum of an arbitrary matrix. Throws ContractError for a zero matrix or a
/// threshold outside (0, 1], NumericError for non-finite entries.
SpectrumReport spectrum(const Eigen::MatrixXd& m, double threshold = 0.9);

/// Spectrum of the combined routing matrix sum_h W_q^h (W_k^h)^T.
template <typename T>
SpectrumReport svd_energy_rank(const router::RouterParams<T>& params, double threshold = 0.9);

/// Combined routing matrix in 64-bit.
template <typename T>
Eigen::MatrixXd combined_routing_matrix(const router::RouterParams<T>& params);

/// First epoch e >= 1 with p[e] - p[e-1] >= jump and p[e] >= level.
std::optional<std::size_t> detect_phase_transition(std::span<const double> precision, double jump = 0.30,
                                                   double level = 0.5);

}  // namespace fci::analysis
