#include "fci/model.hpp"

#include <algorithm>

#include "fci/errors.hpp"

namespace fci::model {

std::string to_string(Preprocess p) {
    switch (p) {
        case Preprocess::raw: return "raw";
        case Preprocess::content: return "content";
        case Preprocess::transformer: return "transformer";
        case Preprocess::flow: return "flow";
        case Preprocess::flow_bidir: return "flow-bidir";
        case Preprocess::linear_attn: return "linear-attn";
    }
    return "?";
}

std::string to_string(RouterKind r) {
    switch (r) {
        case RouterKind::investigator: return "investigator";
        case RouterKind::segment_mean: return "segment-mean";
        case RouterKind::segment_max: return "segment-max";
        case RouterKind::external: return "external";
    }
    return "?";
}

void ModelConfig::validate() const {
    if (d_model == 0 || heads == 0 || d_model % heads != 0)
        throw ConfigError("ModelConfig: d_model must be a positive multiple of heads");
    if (value_vocab == 0 || value_vocab >= vocab) throw ConfigError("ModelConfig: bad value vocabulary");
    if (max_len < 2) throw ConfigError("ModelConfig: max_len must be >= 2");
    if (segment_width == 0) throw ConfigError("ModelConfig: segment_width must be >= 1");
    if (routing.k == 0) throw ConfigError("ModelConfig: k must be >= 1");
    if ((preprocess == Preprocess::raw || preprocess == Preprocess::content) && layers != 0)
        throw ConfigError("ModelConfig: embedding-only preprocessing takes no layers");
}

FciModel::FciModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(seed, 0x30DE1));
    const std::size_t d = cfg_.d_model;
    tok_emb_ = normal_tensor<float>({cfg_.vocab, d}, cfg_.init_std, rng);
    pos_emb_ = attn::PosEmbedding<float>::init(cfg_.max_len, d, rng);
    flow::FlowConfig fc;
    fc.d_model = d;
    fc.d_state = cfg_.d_state;
    fc.conv_width = cfg_.conv_width;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        switch (cfg_.preprocess) {
            case Preprocess::transformer:
            case Preprocess::linear_attn:
                attn_layers_.push_back(attn::AttnLayerParams<float>::init(d, cfg_.heads, rng));
                break;
            case Preprocess::flow:
                flow_fwd_.push_back(flow::FlowBlockParams<float>::init(fc, rng));
                break;
            case Preprocess::flow_bidir:
                flow_fwd_.push_back(flow::FlowBlockParams<float>::init(fc, rng));
                flow_bwd_.push_back(flow::FlowBlockParams<float>::init(fc, rng));
                break;
            default: break;
        }
    }
    router_ = router::RouterParams<float>::init(d, cfg_.heads, cfg_.init_std, rng);
    council_ = council::CouncilParams<float>::init(d, cfg_.heads, cfg_.value_vocab, rng);
    rebuild_param_set();
}

void FciModel::rebuild_param_set() {
    params_ = encoder_params();
    if (cfg_.router != RouterKind::external) router_.collect(params_, "router");
    council_.collect(params_, "council");
}

ParamSet<float> FciModel::encoder_params() const {
    ParamSet<float> set;
    set.add("embed.token", tok_emb_);
    if (cfg_.preprocess != Preprocess::content) set.add("embed.position", pos_emb_.table);
    for (std::size_t l = 0; l < attn_layers_.size(); ++l) attn_layers_[l].collect(set, "layer" + std::to_string(l));
    for (std::size_t l = 0; l < flow_fwd_.size(); ++l) flow_fwd_[l].collect(set, "flow" + std::to_string(l) + ".fwd");
    for (std::size_t l = 0; l < flow_bwd_.size(); ++l) flow_bwd_[l].collect(set, "flow" + std::to_string(l) + ".bwd");
    return set;
}

void FciModel::set_encoder_trainable(bool on) {
    for (auto& e : encoder_params()) e.tensor.set_requires_grad(on);
}

void FciModel::replace_investigator(router::RouterParams<float> params, bool trainable) {
    if (params.d_model() != cfg_.d_model) throw DimensionError("replace_investigator: d_model mismatch");
    router_ = std::move(params);
    for (auto* ws : {&router_.wq, &router_.wk})
        for (auto& w : *ws) w.set_requires_grad(trainable);
    rebuild_param_set();
}

Tensor<float> FciModel::encode(Graph<float>& g, std::span<const std::uint16_t> tokens) const {
    const std::size_t len = tokens.size();
    if (len == 0) throw ContractError("encode: empty sequence");
    std::vector<std::size_t> ids(tokens.begin(), tokens.end());
    for (auto t : ids)
        if (t >= cfg_.vocab) throw IndexError("encode: token " + std::to_string(t) + " outside vocabulary");
    auto x = ops::gather_rows(g, tok_emb_, ids);
    if (cfg_.preprocess != Preprocess::content) x = ops::add(g, x, pos_emb_.lookup(g, len));
    switch (cfg_.preprocess) {
        case Preprocess::transformer:
            for (const auto& l : attn_layers_) x = attn::transformer_layer(g, x, l);
            break;
        case Preprocess::linear_attn:
            for (const auto& l : attn_layers_) x = attn::linear_attention_layer(g, x, l);
            break;
        case Preprocess::flow:
            for (const auto& b : flow_fwd_) x = flow::flow_block(g, x, b);
            break;
        case Preprocess::flow_bidir:
            for (std::size_t l = 0; l < flow_fwd_.size(); ++l) x = flow::bidirectional_flow(g, x, flow_fwd_[l], flow_bwd_[l]);
            break;
        default: break;
    }
    return x;
}

Tensor<float> FciModel::score_row(Graph<float>& g, const Tensor<float>& reps, std::size_t q) const {
    switch (cfg_.router) {
        case RouterKind::investigator: return router::routing_row(g, reps, q, router_);
        case RouterKind::segment_mean:
        case RouterKind::segment_max: {
            const auto method = cfg_.router == RouterKind::segment_mean ? ops::PoolMethod::mean : ops::PoolMethod::max;
            auto summaries = ops::segment_pool(g, reps, cfg_.segment_width, method);
            return router::routing_row_against(g, ops::row(g, reps, q), summaries, router_);
        }
        case RouterKind::external: break;
    }
    throw ContractError("score_row: external routers have no score row");
}

router::Selection FciModel::select(std::span<const float> row, std::size_t q, std::size_t length) const {
    if (cfg_.router == RouterKind::investigator) {
        const std::size_t excl[] = {q};
        return router::select_topk<float>(row, cfg_.routing, excl);
    }
    // segment routers: the best segment other than the query's, all of its positions
    router::RouterConfig one{1, 0};
    const std::size_t excl[] = {segment_of(q, cfg_.segment_width)};
    const std::size_t seg = router::select_topk<float>(row, one, excl).top.front();
    router::Selection sel;
    const std::size_t lo = seg * cfg_.segment_width, hi = std::min(length, lo + cfg_.segment_width);
    for (std::size_t p = lo; p < hi; ++p) sel.top.push_back(p);
    sel.expanded = sel.top;
    for (std::size_t w = 1; w <= cfg_.routing.neighbor_width; ++w)
        if (hi - 1 + w < length) sel.expanded.push_back(hi - 1 + w);
    return sel;
}

ForwardResult FciModel::forward(Graph<float>& g, const tasks::Sample& s, const router::Selection* external) const {
    const std::size_t len = s.tokens.size();
    if (len > cfg_.max_len) throw ConfigError("forward: sequence longer than max_len");
    const bool is_external = cfg_.router == RouterKind::external;
    if (is_external != (external != nullptr))
        throw ContractError("forward: an external selection is required exactly for external routers");
    const auto target = tasks::value_index(s.value);
    if (!target || *target >= cfg_.value_vocab) throw ContractError("forward: gold value outside the value vocabulary");

    ForwardResult out;
    auto reps = encode(g, s.tokens);
    if (is_external) {
        out.selection = *external;
    } else {
        auto row = score_row(g, reps, s.query_pos);
        out.selection = select(row.data(), s.query_pos, len);
        if (cfg_.router == RouterKind::investigator) {
            out.route_loss = router::routing_loss(g, row, router::RoutingSupervision{s.query_pos, s.key_pos});
        } else {
            const std::size_t w = cfg_.segment_width;
            const std::size_t qs = segment_of(s.query_pos, w), as = segment_of(s.key_pos, w);
            if (qs != as) out.route_loss = router::routing_loss(g, row, router::RoutingSupervision{qs, as});
        }
    }
    out.routed_to_gold = out.selection.contains_top(s.key_pos);
    const std::size_t queries[] = {s.query_pos};
    auto y = council::sparse_attention(g, reps, out.selection.expanded, council_,
                                       std::span<const std::size_t>(queries))
                 .y;
    auto logits = council::predict_value(g, y, 0, council_);
    out.task_loss = ops::cross_entropy(g, logits, *target);
    auto lv = logits.data();
    out.prediction = static_cast<std::size_t>(std::max_element(lv.begin(), lv.end()) - lv.begin());
    return out;
}

}  // namespace fci::model
