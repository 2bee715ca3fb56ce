#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fci/ops.hpp"
#include "fci/router.hpp"
#include "test_support.hpp"

using namespace fci;
using namespace fci::testing;
using router::RouterConfig;
using router::RouterParams;
using router::RoutingSupervision;

namespace {

std::vector<double> scores_oracle(const TensorD& x, const RouterParams<double>& p) {
    const std::size_t len = x.rows(), d = x.cols(), dh = p.head_dim(), heads = p.heads;
    std::vector<double> s(len * len, 0.0);
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < len; ++j) {
            double total = 0;
            for (std::size_t h = 0; h < heads; ++h) {
                double acc = 0;
                for (std::size_t c = 0; c < dh; ++c) {
                    double q = 0, k = 0;
                    for (std::size_t m = 0; m < d; ++m) {
                        q += p.wq[h].at(m, c) * x.at(i, m);
                        k += p.wk[h].at(m, c) * x.at(j, m);
                    }
                    acc += q * k;
                }
                total += acc / std::sqrt(double(d) / double(heads));
            }
            s[i * len + j] = total / double(heads);
        }
    return s;
}

}  // namespace

TEST_SUITE("router") {

TEST_CASE("unit vector case") {
    Rng rng(400);
    auto p = RouterParams<double>::init(4, 1, 0.02, rng);
    for (auto* w : {&p.wq[0], &p.wk[0]}) {
        std::fill(w->data().begin(), w->data().end(), 0.0);
        for (std::size_t i = 0; i < 4; ++i) w->at(i, i) = 1.0;
    }
    TensorD x({2, 4}, {1, 0, 0, 0, 1, 0, 0, 0});
    GraphD g(false);
    auto s = router::routing_scores(g, x, p);
    for (double v : s.data()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
    auto zero = router::routing_scores(g, TensorD({3, 4}), p);
    for (double v : zero.data()) CHECK(v == 0.0);
}

TEST_CASE("routing scores match the per-pair per-head loop") {
    Rng rng(401);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t heads = 1 + rep % 4, d = heads * (1 + rep % 3);
        auto p = RouterParams<double>::init(d, heads, 0.7, rng);
        auto x = random_d({5, d}, rng, 1.0, false);
        GraphD g(false);
        auto s = router::routing_scores(g, x, p);
        CHECK(max_abs_diff(s.data(), std::span<const double>(scores_oracle(x, p))) < 1e-6);
        auto row = router::routing_row(g, x, 3, p);
        for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(row[j] - s.at(3, j)) < 1e-12);
    }
}

TEST_CASE("scores are bilinear and row argmax is scale invariant") {
    Rng rng(402);
    auto p = RouterParams<double>::init(8, 2, 0.5, rng);
    auto x = random_d({6, 8}, rng, 1.0, false);
    GraphD g(false);
    auto s = router::routing_scores(g, x, p);
    auto s3 = router::routing_scores(g, ops::scale(g, x, 3.0), p);
    for (std::size_t i = 0; i < s.numel(); ++i) CHECK(s3[i] == doctest::Approx(9.0 * s[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < 6; ++i) {
        auto argmax = [&](const TensorD& m) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < 6; ++j)
                if (m.at(i, j) > m.at(i, best)) best = j;
            return best;
        };
        CHECK(argmax(s) == argmax(s3));
    }
}

TEST_CASE("top-k selection") {
    const double row[] = {0.9, 0.1, 0.5};
    RouterConfig cfg;
    cfg.k = 1;
    auto sel = router::select_topk<double>(row, cfg, {});
    CHECK(sel.top == std::vector<std::size_t>{0});
    CHECK(sel.expanded == std::vector<std::size_t>{0, 1});

    const double last[] = {0.0, 0.1, 0.2, 5.0};
    sel = router::select_topk<double>(last, cfg, {});
    CHECK(sel.expanded == std::vector<std::size_t>{3});

    const double ties[] = {1.0, 1.0, 1.0, 1.0};
    cfg.k = 2;
    const std::size_t excl[] = {0};
    sel = router::select_topk<double>(ties, cfg, excl);
    CHECK(sel.top == std::vector<std::size_t>{1, 2});

    cfg.k = 4;
    CHECK_THROWS_AS(router::select_topk<double>(ties, cfg, excl), ConfigError);
    cfg.k = 0;
    CHECK_THROWS_AS(router::select_topk<double>(ties, cfg, {}), ConfigError);
}

TEST_CASE("top-k against a full-sort oracle") {
    Rng rng(403);
    std::normal_distribution<double> nd;
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t len = 5 + rep % 40;
        std::vector<double> row(len);
        for (auto& v : row) v = nd(rng);
        const std::size_t q = rep % len;
        RouterConfig cfg;
        cfg.k = 1 + rep % 4;
        const std::size_t excl[] = {q};
        auto sel = router::select_topk<double>(row, cfg, excl);
        std::vector<std::size_t> order;
        for (std::size_t j = 0; j < len; ++j)
            if (j != q) order.push_back(j);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return row[a] > row[b]; });
        std::vector<std::size_t> expect(order.begin(), order.begin() + long(cfg.k));
        std::sort(expect.begin(), expect.end());
        CHECK(sel.top == expect);
        CHECK(sel.contains_top(order.front()));
        CHECK(sel.expanded.size() >= cfg.k);
        CHECK(sel.expanded.size() <= 2 * cfg.k);
        CHECK(std::is_sorted(sel.expanded.begin(), sel.expanded.end()));
        for (auto j : sel.top) {
            CHECK(sel.contains_expanded(j));
            CHECK(sel.contains_expanded(std::min(j + 1, len - 1)));
        }
    }
}

TEST_CASE("routing loss") {
    GraphD g;
    TensorD uniform({1, 5});
    CHECK(router::routing_loss(g, uniform, RoutingSupervision{2, 4}).item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
    TensorD sat({1, 5}, {0, 0, 0, 30, 0});
    CHECK(router::routing_loss(g, sat, RoutingSupervision{0, 3}).item() < 1e-12);
    CHECK_THROWS_AS(router::routing_loss(g, uniform, RoutingSupervision{1, 1}), ContractError);
    CHECK_THROWS_AS(router::routing_loss(g, uniform, RoutingSupervision{1, 5}), ContractError);

    Rng rng(404);
    for (int rep = 0; rep < 50; ++rep) {
        auto m = random_d({7, 7}, rng, 2.0, false);
        const std::size_t q = rep % 7, a = (q + 1 + rep % 6) % 7;
        double mx = -INFINITY, den = 0;
        for (std::size_t j = 0; j < 7; ++j)
            if (j != q) mx = std::max(mx, m.at(q, j));
        for (std::size_t j = 0; j < 7; ++j)
            if (j != q) den += std::exp(m.at(q, j) - mx);
        const double ref = -(m.at(q, a) - mx - std::log(den));
        CHECK(std::abs(router::routing_loss(g, m, RoutingSupervision{q, a}).item() - ref) < 1e-10);
    }
}

TEST_CASE("random projections") {
    Rng rng(405);
    auto p = RouterParams<float>::init(16, 4, 0.02, rng);
    auto before = p.wq[0].clone();
    auto r1 = router::randomize_projections(p, 7);
    auto r2 = router::randomize_projections(p, 7);
    auto r3 = router::randomize_projections(p, 8);
    for (std::size_t h = 0; h < 4; ++h) {
        CHECK(r1.wq[h].shape() == p.wq[h].shape());
        CHECK(r1.wk[h].shape() == p.wk[h].shape());
        CHECK(std::equal(r1.wq[h].data().begin(), r1.wq[h].data().end(), r2.wq[h].data().begin()));
        CHECK(std::equal(r1.wk[h].data().begin(), r1.wk[h].data().end(), r2.wk[h].data().begin()));
    }
    CHECK_FALSE(std::equal(r1.wq[0].data().begin(), r1.wq[0].data().end(), r3.wq[0].data().begin()));
    CHECK(std::equal(before.data().begin(), before.data().end(), p.wq[0].data().begin()));
    double ss = 0;
    for (auto& w : r1.wq)
        for (float v : w.data()) ss += double(v) * v;
    CHECK(std::sqrt(ss / (16.0 * 16.0)) == doctest::Approx(0.25).epsilon(0.15));
}

TEST_CASE("stacked projections reproduce the summed head products") {
    Rng rng(406);
    auto p = RouterParams<double>::init(8, 2, 0.5, rng);
    auto q = p.stacked_query();
    auto k = p.stacked_key();
    GraphD g(false);
    auto combined = ops::matmul_nt(g, q, k);
    auto summed = ops::add(g, ops::matmul_nt(g, p.wq[0], p.wk[0]), ops::matmul_nt(g, p.wq[1], p.wk[1]));
    CHECK(max_abs_diff(combined.data(), summed.data()) < 1e-12);
}

}  // TEST_SUITE
