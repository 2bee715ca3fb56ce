#pragma once

#include <cstddef>
#include <string>

#include "fci/params.hpp"
#include "fci/tensor.hpp"

namespace fci::flow {

struct FlowConfig {
    std::size_t d_model = 128;
    std::size_t d_state = 16;
    std::size_t conv_width = 4;
    std::size_t layers = 2;
    bool bidirectional = false;

    void validate() const;
};

/// Weights of one Mamba-style block.
///
/// The state matrix is stored as a_log and used as A = -exp(a_log), so it is
/// strictly negative for any parameter value; the step size goes through
/// softplus and is strictly positive.
template <typename T>
struct FlowBlockParams {
    Tensor<T> in_proj;    // d x 2d: stream | gate
    Tensor<T> conv;       // w x d depthwise causal kernel
    Tensor<T> conv_bias;  // d
    Tensor<T> dt_proj;    // d x d
    Tensor<T> dt_bias;    // d
    Tensor<T> b_proj;     // d x N
    Tensor<T> c_proj;     // d x N
    Tensor<T> a_log;      // d x N
    Tensor<T> out_proj;   // d x d

    static FlowBlockParams init(const FlowConfig& cfg, Rng& rng);
    static FlowBlockParams zeros(const FlowConfig& cfg);
    void collect(ParamSet<T>& set, const std::string& prefix) const;
};

/// Fused selective scan over precomputed inputs.
///
/// x, delta: [L x d]; a: [d x N] (negative); b, c: [L x N]. For each channel,
/// h_t = exp(delta_t * a) h_{t-1} + delta_t * b_t * x_t with h_0 = 0 and
/// y_t = c_t . h_t.
template <typename T>
Tensor<T> scan(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a, const Tensor<T>& b,
               const Tensor<T>& c);

/// Derives delta, B, C from x through the block's projections, then scans.
template <typename T>
Tensor<T> selective_scan(Graph<T>& g, const Tensor<T>& x, const FlowBlockParams<T>& params);

/// Non-residual part of a block: project, causal conv, SiLU, scan, SiLU gate, project out.
template <typename T>
Tensor<T> flow_branch(Graph<T>& g, const Tensor<T>& x, const FlowBlockParams<T>& params);

/// x + flow_branch(x).
template <typename T>
Tensor<T> flow_block(Graph<T>& g, const Tensor<T>& x, const FlowBlockParams<T>& params);

/// x + branch_fwd(x) + reverse(branch_bwd(reverse(x))).
///
/// The residual is added once, so zeroed backward weights reduce this to
/// flow_block(x, fwd).
template <typename T>
Tensor<T> bidirectional_flow(Graph<T>& g, const Tensor<T>& x, const FlowBlockParams<T>& fwd,
                             const FlowBlockParams<T>& bwd);

}  // namespace fci::flow
