#include <cmath>

#include "doctest.h"
#include "fci/attention.hpp"
#include "fci/council.hpp"
#include "fci/flow.hpp"
#include "fci/ops.hpp"
#include "fci/router.hpp"
#include "test_support.hpp"

using namespace fci;
using namespace fci::testing;

namespace {

constexpr double kTol = 1e-4;

const std::vector<Shape> kElementwiseShapes = {{7}, {3, 4}, {2, 3, 2}};

}  // namespace

TEST_SUITE("gradients") {

TEST_CASE("elementwise unary ops, every rank") {
    using Unary = TensorD (*)(GraphD&, const TensorD&);
    const std::vector<std::pair<const char*, Unary>> cases = {
        {"silu", ops::silu<double>},       {"sigmoid", ops::sigmoid<double>},
        {"softplus", ops::softplus<double>}, {"exp", ops::exp<double>},
        {"elu_plus_one", ops::elu_plus_one<double>},
    };
    Rng rng(100);
    for (const auto& shape : kElementwiseShapes) {
        for (const auto& [name, fn] : cases) {
            auto x = random_d(shape, rng);
            const double err = gradcheck([&](GraphD& g) { return weighted_sum(g, fn(g, x)); }, {x});
            INFO(name << " rank " << shape.size());
            CHECK(err <= kTol);
        }
    }
}

TEST_CASE("elementwise binary ops, every rank") {
    Rng rng(101);
    for (const auto& shape : kElementwiseShapes) {
        auto a = random_d(shape, rng);
        auto b = random_d(shape, rng);
        CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::add(g, a, b)); }, {a, b}) <= kTol);
        CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::sub(g, a, b)); }, {a, b}) <= kTol);
        CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::mul(g, a, b)); }, {a, b}) <= kTol);
        CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::scale(g, a, -1.7)); }, {a}) <= kTol);
        CHECK(gradcheck([&](GraphD& g) { return ops::sum(g, ops::mul(g, a, a)); }, {a}) <= kTol);
        CHECK(gradcheck([&](GraphD& g) { return ops::mean(g, ops::mul(g, a, b)); }, {a, b}) <= kTol);
    }
}

TEST_CASE("matrix products") {
    Rng rng(102);
    auto a = random_d({4, 3}, rng);
    auto b = random_d({3, 5}, rng);
    auto c = random_d({6, 3}, rng);
    auto d = random_d({4, 2}, rng);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::matmul(g, a, b)); }, {a, b}) <= kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::matmul_nt(g, a, c)); }, {a, c}) <= kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::matmul_tn(g, a, d)); }, {a, d}) <= kTol);
    auto v = random_d({3}, rng);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::matmul(g, v, b)); }, {v, b}) <= kTol);
}

TEST_CASE("bias, reductions and normalisation") {
    Rng rng(103);
    auto x = random_d({5, 4}, rng);
    auto bias = random_d({4}, rng);
    auto scale = random_d({4}, rng);
    auto shift = random_d({4}, rng);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::add_bias(g, x, bias)); }, {x, bias}) <= kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::col_sums(g, x)); }, {x}) <= kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::rms_norm(g, x, scale, shift)); },
                    {x, scale, shift}) <= kTol);
    auto den = random_d({5, 1}, rng);
    for (auto& v : den.data()) v = 0.5 + std::abs(v);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::div_rows(g, x, den, 1e-6)); }, {x, den}) <=
          kTol);
}

TEST_CASE("softmax and cross entropy") {
    Rng rng(104);
    auto m = random_d({4, 6}, rng);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::softmax_rows(g, m)); }, {m}) <= kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::softmax_rows(g, m, true)); }, {m}) <= kTol);
    auto logits = random_d({9}, rng);
    CHECK(gradcheck([&](GraphD& g) { return ops::cross_entropy(g, logits, 4); }, {logits}) <= kTol);
    const std::size_t excl[] = {2, 7};
    CHECK(gradcheck([&](GraphD& g) { return ops::cross_entropy(g, logits, 4, excl); }, {logits}) <= kTol);
    auto row = random_d({1, 9}, rng);
    CHECK(gradcheck([&](GraphD& g) { return ops::cross_entropy(g, row, 0); }, {row}) <= kTol);
}

TEST_CASE("composite matmul, softmax, cross entropy") {
    Rng rng(105);
    auto x = random_d({3, 5}, rng);
    auto w = random_d({5, 7}, rng);
    const double err = gradcheck(
        [&](GraphD& g) {
            auto p = ops::softmax_rows(g, ops::matmul(g, x, w));
            return ops::cross_entropy(g, ops::row(g, p, 1), 3);
        },
        {x, w});
    CHECK(err <= kTol);
}

TEST_CASE("layout ops") {
    Rng rng(106);
    auto x = random_d({5, 4}, rng);
    auto y = random_d({5, 2}, rng);
    const std::size_t idx[] = {4, 0, 4, 2};
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::gather_rows(g, x, idx)); }, {x}) <= kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::row(g, x, 3)); }, {x}) <= kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::slice_cols(g, x, 1, 2)); }, {x}) <= kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::reverse_rows(g, x)); }, {x}) <= kTol);
    CHECK(gradcheck(
              [&](GraphD& g) {
                  const TensorD parts[] = {x, y, x};
                  return weighted_sum(g, ops::concat_cols(g, std::span<const TensorD>(parts)));
              },
              {x, y}) <= kTol);
}

TEST_CASE("sequence ops") {
    Rng rng(107);
    auto x = random_d({7, 3}, rng);
    auto k4 = random_d({4, 3}, rng);
    auto k3 = random_d({3, 3}, rng);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::depthwise_conv1d(g, x, k4, true)); }, {x, k4}) <=
          kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::depthwise_conv1d(g, x, k3, false)); },
                    {x, k3}) <= kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::segment_pool(g, x, 3, ops::PoolMethod::mean)); },
                    {x}) <= kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, ops::segment_pool(g, x, 3, ops::PoolMethod::max)); },
                    {x}) <= kTol);
}

TEST_CASE("selective scan and flow blocks") {
    Rng rng(108);
    flow::FlowConfig cfg;
    cfg.d_model = 4;
    cfg.d_state = 3;
    cfg.conv_width = 3;
    auto x = random_d({6, 4}, rng);
    auto delta = random_d({6, 4}, rng);
    for (auto& v : delta.data()) v = 0.1 + 0.5 * std::abs(v);
    auto a = random_d({4, 3}, rng);
    for (auto& v : a.data()) v = -0.2 - std::abs(v);
    auto b = random_d({6, 3}, rng);
    auto c = random_d({6, 3}, rng);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, flow::scan(g, x, delta, a, b, c)); },
                    {x, delta, a, b, c}) <= kTol);

    auto fwd = flow::FlowBlockParams<double>::init(cfg, rng);
    auto bwd = flow::FlowBlockParams<double>::init(cfg, rng);
    for (auto* p : {&fwd, &bwd})
        for (auto* w : {&p->in_proj, &p->dt_proj, &p->b_proj, &p->c_proj, &p->out_proj}) fill_normal(*w, 0.5, rng);
    std::vector<TensorD> leaves{x, fwd.in_proj, fwd.conv, fwd.conv_bias, fwd.dt_proj, fwd.dt_bias,
                                fwd.b_proj, fwd.c_proj, fwd.a_log, fwd.out_proj};
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, flow::selective_scan(g, x, fwd)); },
                    {x, fwd.dt_proj, fwd.dt_bias, fwd.b_proj, fwd.c_proj, fwd.a_log}) <= kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, flow::flow_block(g, x, fwd)); }, leaves) <= kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, flow::bidirectional_flow(g, x, fwd, bwd)); },
                    {x, fwd.in_proj, bwd.in_proj, bwd.out_proj, bwd.conv}) <= kTol);
}

TEST_CASE("attention layers") {
    Rng rng(109);
    auto p = attn::AttnLayerParams<double>::init(8, 2, rng);
    for (auto& w : p.wq) fill_normal(w, 0.4, rng);
    for (auto& w : p.wk) fill_normal(w, 0.4, rng);
    for (auto& w : p.wv) fill_normal(w, 0.4, rng);
    fill_normal(p.wo, 0.4, rng);
    for (auto* w : {&p.ffn.w1, &p.ffn.w2, &p.ffn.w3}) fill_normal(*w, 0.3, rng);
    auto x = random_d({5, 8}, rng);
    std::vector<TensorD> leaves{x, p.wq[0], p.wk[1], p.wv[0], p.wo, p.norm1_scale, p.norm1_shift};
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, attn::mha_forward(g, x, p, false).y); },
                    {x, p.wq[0], p.wk[1], p.wv[0], p.wo}) <= kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, attn::mha_forward(g, x, p, true).y); },
                    {x, p.wq[1], p.wk[0]}) <= kTol);
    leaves.insert(leaves.end(), {p.ffn.w1, p.ffn.b2, p.ffn.w3, p.norm2_scale});
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, attn::transformer_layer(g, x, p)); }, leaves) <= kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, attn::linear_attention(g, x, p)); },
                    {x, p.wq[0], p.wk[1], p.wv[1], p.wo}) <= kTol);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, attn::linear_attention_layer(g, x, p)); }, leaves) <=
          kTol);
    auto table = attn::PosEmbedding<double>::init(9, 8, rng);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, table.lookup(g, 5)); }, {table.table}) <= kTol);
}

TEST_CASE("router and council") {
    Rng rng(110);
    auto rp = router::RouterParams<double>::init(8, 2, 0.5, rng);
    auto x = random_d({6, 8}, rng);
    CHECK(gradcheck([&](GraphD& g) { return weighted_sum(g, router::routing_scores(g, x, rp)); },
                    {x, rp.wq[0], rp.wk[1]}) <= kTol);
    CHECK(gradcheck(
              [&](GraphD& g) {
                  return router::routing_loss(g, router::routing_scores(g, x, rp), router::RoutingSupervision{1, 4});
              },
              {x, rp.wq[0], rp.wq[1], rp.wk[0], rp.wk[1]}) <= kTol);
    CHECK(gradcheck(
              [&](GraphD& g) {
                  return router::routing_loss(g, router::routing_row(g, x, 2, rp), router::RoutingSupervision{2, 0});
              },
              {x, rp.wq[0], rp.wk[1]}) <= kTol);

    auto cp = council::CouncilParams<double>::init(8, 2, 5, rng);
    for (auto& w : cp.layer.wq) fill_normal(w, 0.4, rng);
    for (auto& w : cp.layer.wk) fill_normal(w, 0.4, rng);
    fill_normal(cp.head_w, 0.4, rng);
    const std::size_t sel[] = {0, 3, 4};
    const std::size_t qs[] = {2};
    CHECK(gradcheck(
              [&](GraphD& g) {
                  auto y = council::sparse_attention(g, x, sel, cp, std::span<const std::size_t>(qs)).y;
                  return ops::cross_entropy(g, council::predict_value(g, y, 0, cp), 3);
              },
              {x, cp.layer.wq[0], cp.layer.wk[1], cp.layer.wv[0], cp.layer.wo, cp.head_w, cp.head_b}) <= kTol);
}

}  // TEST_SUITE
