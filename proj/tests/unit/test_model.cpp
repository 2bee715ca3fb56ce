#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fci/errors.hpp"
#include "fci/model.hpp"
#include "fci/selection.hpp"
#include "test_support.hpp"

using namespace fci;
using namespace fci::model;

namespace {

ModelConfig small(Preprocess pre, std::size_t layers, RouterKind router = RouterKind::investigator) {
    ModelConfig c;
    c.d_model = 16;
    c.heads = 2;
    c.max_len = 48;
    c.preprocess = pre;
    c.layers = layers;
    c.router = router;
    c.routing.k = 4;
    c.init_std = 0.2;
    return c;
}

tasks::SequenceBatch small_data(std::size_t n, std::uint64_t seed, bool near = false) {
    tasks::DistantConfig d;
    d.length = 48;
    d.min_dist = 16;
    d.window = 8;
    d.n_distractors = 2;
    d.near = near;
    return tasks::gen_distant_evidence(n, d, seed);
}

double total_loss(const FciModel& m, const tasks::Sample& s) {
    Graph<float> g(false);
    auto r = m.forward(g, s);
    return double(r.task_loss.item()) + (r.route_loss.numel() ? double(r.route_loss.item()) : 0.0);
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("every preprocessing builds and produces finite losses") {
    const auto data = small_data(2, 60);
    const std::pair<Preprocess, std::size_t> cases[] = {
        {Preprocess::raw, 0},  {Preprocess::content, 0},    {Preprocess::transformer, 2},
        {Preprocess::flow, 2}, {Preprocess::flow_bidir, 1}, {Preprocess::linear_attn, 1},
    };
    for (auto [pre, layers] : cases) {
        CAPTURE(to_string(pre));
        FciModel m(small(pre, layers), 61);
        Graph<float> g(false);
        auto reps = m.encode(g, data.samples[0].tokens);
        CHECK(reps.shape() == Shape{48, 16});
        auto r = m.forward(g, data.samples[0]);
        CHECK(std::isfinite(r.task_loss.item()));
        CHECK(std::isfinite(r.route_loss.item()));
        CHECK(r.selection.top.size() == 4);
        CHECK_FALSE(r.selection.contains_top(data.samples[0].query_pos));
        CHECK(r.prediction < tasks::kValueVocab);
        CHECK(r.routed_to_gold == r.selection.contains_top(data.samples[0].key_pos));
    }
    CHECK(FciModel(small(Preprocess::content, 0), 1).position_table().numel() == 0);
}

TEST_CASE("configuration errors") {
    CHECK_THROWS_AS(FciModel(small(Preprocess::raw, 1), 0), ConfigError);
    auto c = small(Preprocess::transformer, 1);
    c.heads = 3;
    CHECK_THROWS_AS(FciModel(c, 0), ConfigError);
    FciModel ext(small(Preprocess::raw, 0, RouterKind::external), 0);
    const auto data = small_data(1, 62);
    Graph<float> g(false);
    CHECK_THROWS(ext.forward(g, data.samples[0]));
    auto sel = expand_selection({data.samples[0].key_pos}, 1, 48);
    auto r = ext.forward(g, data.samples[0], &sel);
    CHECK(r.route_loss.numel() == 0);
    CHECK(r.routed_to_gold);
}

TEST_CASE("construction is deterministic in the seed") {
    FciModel a(small(Preprocess::flow, 1), 5), b(small(Preprocess::flow, 1), 5), c(small(Preprocess::flow, 1), 6);
    REQUIRE(a.params().size() == b.params().size());
    bool differs = false;
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        const auto& x = a.params()[i].tensor;
        const auto& y = b.params()[i].tensor;
        CHECK(a.params()[i].name == b.params()[i].name);
        CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
        const auto& z = c.params()[i].tensor;
        differs |= !std::equal(x.data().begin(), x.data().end(), z.data().begin());
    }
    CHECK(differs);
}

TEST_CASE("segment routers never pick the query's segment") {
    const auto data = small_data(20, 63);
    for (auto kind : {RouterKind::segment_mean, RouterKind::segment_max}) {
        FciModel m(small(Preprocess::flow, 1, kind), 64);
        for (const auto& s : data.samples) {
            Graph<float> g(false);
            auto r = m.forward(g, s);
            REQUIRE(r.selection.top.size() == 8);
            const auto seg = segment_of(r.selection.top.front(), 8);
            CHECK(seg != segment_of(s.query_pos, 8));
            for (std::size_t i = 0; i < 8; ++i) CHECK(r.selection.top[i] == seg * 8 + i);
            const bool same = segment_of(s.query_pos, 8) == segment_of(s.key_pos, 8);
            CHECK((r.route_loss.numel() == 0) == same);
        }
    }
}

TEST_CASE("whole-model gradient agrees with a directional difference") {
    const auto data = small_data(1, 65);
    for (auto pre : {Preprocess::transformer, Preprocess::flow}) {
        CAPTURE(to_string(pre));
        FciModel m(small(pre, 1), 66);
        m.params().zero_grad();
        {
            Graph<float> g;
            auto r = m.forward(g, data.samples[0]);
            backward(g, ops::add(g, r.task_loss, r.route_loss));
        }
        Rng rng(67);
        std::normal_distribution<double> nd;
        std::vector<std::vector<float>> dir;
        double analytic = 0;
        for (auto& e : m.params()) {
            std::vector<float> v(e.tensor.numel());
            for (std::size_t i = 0; i < v.size(); ++i) {
                v[i] = float(nd(rng));
                analytic += double(v[i]) * double(e.tensor.grad()[i]);
            }
            dir.push_back(std::move(v));
        }
        auto shift = [&](double eps) {
            std::size_t p = 0;
            for (auto& e : m.params()) {
                for (std::size_t i = 0; i < e.tensor.numel(); ++i) e.tensor[i] += float(eps) * dir[p][i];
                ++p;
            }
        };
        const double eps = 2e-3;
        shift(eps);
        const double up = total_loss(m, data.samples[0]);
        shift(-2 * eps);
        const double down = total_loss(m, data.samples[0]);
        shift(eps);
        const double numeric = (up - down) / (2 * eps);
        CHECK(std::abs(numeric - analytic) <= 0.03 * std::abs(analytic) + 1e-3);
    }
}

TEST_CASE("replacing and freezing the Investigator") {
    FciModel m(small(Preprocess::raw, 0), 68);
    const auto before = m.params().scalar_count();
    Rng rng(69);
    auto fresh = router::RouterParams<float>::init(16, 2, 0.5, rng);
    m.replace_investigator(fresh, false);
    CHECK(m.params().scalar_count() == before);
    for (const auto& w : m.investigator().wq) CHECK_FALSE(w.requires_grad());
    m.set_encoder_trainable(false);
    for (auto& e : m.encoder_params()) CHECK_FALSE(e.tensor.requires_grad());
    m.set_encoder_trainable(true);
    for (auto& e : m.encoder_params()) CHECK(e.tensor.requires_grad());
}

TEST_CASE("checkpoint round trip") {
    FciModel a(small(Preprocess::transformer, 1), 70), b(small(Preprocess::transformer, 1), 71);
    const auto path = std::filesystem::temp_directory_path() / "fci_model_ckpt.bin";
    a.params().save(path);
    b.params().load(path);
    std::filesystem::remove(path);
    const auto data = small_data(1, 72);
    CHECK(total_loss(a, data.samples[0]) == total_loss(b, data.samples[0]));
}

}  // TEST_SUITE

TEST_SUITE("selection") {

TEST_CASE("oracle and expansion") {
    const auto data = small_data(30, 80);
    router::RouterConfig rc;
    rc.k = 4;
    auto oracle = make_oracle_source(rc);
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        auto sel = oracle->select(data.samples[i], i, false);
        CHECK(sel.top == std::vector<std::size_t>{data.samples[i].key_pos});
        CHECK(sel.contains_expanded(data.samples[i].key_pos + 1));
    }
    auto e = expand_selection({3, 47}, 2, 48);
    CHECK(e.expanded == std::vector<std::size_t>{3, 4, 5, 47});
}

TEST_CASE("random source: reproducible, excludes the query, hits at k/(L-1)") {
    const auto data = small_data(4000, 81);
    router::RouterConfig rc;
    rc.k = 4;
    auto a = make_random_source(rc, 9);
    auto b = make_random_source(rc, 9);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        auto s1 = a->select(data.samples[i], i, true);
        CHECK(s1.top == b->select(data.samples[i], i, true).top);
        CHECK(s1.top.size() == 4);
        CHECK_FALSE(s1.contains_top(data.samples[i].query_pos));
        hits += s1.contains_top(data.samples[i].key_pos);
    }
    const double p = 4.0 / 47.0;
    const double se = std::sqrt(p * (1 - p) / 4000.0);
    CHECK(std::abs(double(hits) / 4000.0 - p) < 4 * se);
}

TEST_CASE("bloom source finds the exact key match") {
    const auto data = small_data(100, 82);
    router::RouterConfig rc;
    rc.k = 4;
    auto bloom = make_bloom_source(rc, 16);
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        auto sel = bloom->select(data.samples[i], i, false);
        CHECK(sel.contains_top(data.samples[i].key_pos));
        CHECK_FALSE(sel.contains_top(data.samples[i].query_pos));
    }
}

TEST_CASE("bandit sources learn only from training samples") {
    const auto data = small_data(60, 83);
    router::RouterConfig rc;
    rc.k = 4;
    FciModel m(small(Preprocess::raw, 0, RouterKind::external), 84);
    for (auto kind : {BanditKind::linucb, BanditKind::thompson, BanditKind::oful}) {
        BanditConfig bc;
        bc.kind = kind;
        auto src = make_bandit_source(rc, bc, m.token_table(), m.position_table(), 85);
        auto ref = make_bandit_source(rc, bc, m.token_table(), m.position_table(), 85);
        const auto first = src->select(data.samples[0], 0, false).top;
        for (std::size_t i = 1; i < 30; ++i) src->select(data.samples[i], i, false);
        CHECK(src->select(data.samples[0], 0, false).top == ref->select(data.samples[0], 0, false).top);
        CHECK(first.size() == 4);
        for (std::size_t i = 1; i < 30; ++i) src->select(data.samples[i], i, true);
        if (kind != BanditKind::thompson)
            CHECK(src->select(data.samples[0], 0, false).top != ref->select(data.samples[0], 0, false).top);
    }
}

}  // TEST_SUITE
