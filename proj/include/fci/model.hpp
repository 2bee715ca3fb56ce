#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fci/attention.hpp"
#include "fci/council.hpp"
#include "fci/flow.hpp"
#include "fci/ops.hpp"
#include "fci/params.hpp"
#include "fci/router.hpp"
#include "fci/tasks.hpp"

namespace fci::model {

/// Representation fed to both the Investigator and the Council.
enum class Preprocess {
    raw,          // token + position embedding
    content,      // token embedding only
    transformer,  // raw followed by `layers` transformer layers
    flow,         // raw followed by `layers` Flow blocks
    flow_bidir,   // raw followed by `layers` bidirectional Flow blocks
    linear_attn,  // raw followed by `layers` linear-attention layers
};

enum class RouterKind {
    investigator,
    segment_mean,
    segment_max,
    /// Any router whose selections come from outside the model.
    external,
};

std::string to_string(Preprocess p);
std::string to_string(RouterKind r);

struct ModelConfig {
    std::size_t d_model = 128;
    std::size_t heads = 4;
    std::size_t d_state = 16;
    std::size_t conv_width = 4;
    std::size_t max_len = 512;
    std::size_t vocab = tasks::kVocabEnd;
    std::size_t value_vocab = tasks::kValueVocab;
    Preprocess preprocess = Preprocess::transformer;
    std::size_t layers = 1;
    RouterKind router = RouterKind::investigator;
    router::RouterConfig routing{};
    std::size_t segment_width = 8;
    double init_std = 0.02;

    void validate() const;
};

/// Everything one forward pass produces for a sample.
struct ForwardResult {
    Tensor<float> task_loss;   // scalar
    Tensor<float> route_loss;  // scalar; empty when the router is not learned
    router::Selection selection;
    std::size_t prediction = 0;  // value index
    bool routed_to_gold = false;
};

class FciModel {
  public:
    FciModel(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return cfg_; }
    ParamSet<float>& params() noexcept { return params_; }
    const ParamSet<float>& params() const noexcept { return params_; }

    /// Investigator input representations, [L x d].
    Tensor<float> encode(Graph<float>& g, std::span<const std::uint16_t> tokens) const;

    /// Routing score row of position q ([1 x L], or [1 x segments]).
    Tensor<float> score_row(Graph<float>& g, const Tensor<float>& reps, std::size_t q) const;

    /// Learned selection from a score row. The query position (or its segment)
    /// is never selected.
    router::Selection select(std::span<const float> score_row, std::size_t q, std::size_t length) const;

    /// Task loss, routing loss and prediction. `external` is required exactly
    /// when the router kind is external.
    ForwardResult forward(Graph<float>& g, const tasks::Sample& s,
                          const router::Selection* external = nullptr) const;

    router::RouterParams<float>& investigator() noexcept { return router_; }
    const router::RouterParams<float>& investigator() const noexcept { return router_; }
    /// Swap in other projections (ablations, pretrained routers); the parameter
    /// set is rebuilt so the optimizer sees the new tensors.
    void replace_investigator(router::RouterParams<float> params, bool trainable);

    const Tensor<float>& token_table() const noexcept { return tok_emb_; }
    /// Empty for content-only embeddings.
    Tensor<float> position_table() const {
        return cfg_.preprocess == Preprocess::content ? Tensor<float>() : pos_emb_.table;
    }

    /// Freeze or unfreeze the embedding and preprocessing stack.
    void set_encoder_trainable(bool on);
    /// The embedding and preprocessing parameters only.
    ParamSet<float> encoder_params() const;

  private:
    void rebuild_param_set();

    ModelConfig cfg_;
    Tensor<float> tok_emb_;
    attn::PosEmbedding<float> pos_emb_;
    std::vector<attn::AttnLayerParams<float>> attn_layers_;
    std::vector<flow::FlowBlockParams<float>> flow_fwd_, flow_bwd_;
    router::RouterParams<float> router_;
    council::CouncilParams<float> council_;
    ParamSet<float> params_;
};

/// Segment of position p for the segment routers.
inline std::size_t segment_of(std::size_t p, std::size_t width) { return p / width; }

}  // namespace fci::model
