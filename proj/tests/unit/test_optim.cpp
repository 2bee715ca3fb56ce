#include <cmath>

#include "doctest.h"
#include "fci/optim.hpp"
#include "test_support.hpp"

using namespace fci;
using namespace fci::optim;

namespace {

/// Straight-line AdamW in long double.
struct ReferenceAdamW {
    long double m = 0, v = 0;
    int t = 0;
    long double step(long double p, long double g, long double lr, const AdamWConfig& c) {
        ++t;
        m = c.beta1 * m + (1 - c.beta1) * g;
        v = c.beta2 * v + (1 - c.beta2) * g * g;
        const long double mh = m / (1 - std::pow((long double)c.beta1, t));
        const long double vh = v / (1 - std::pow((long double)c.beta2, t));
        return p - lr * mh / (std::sqrt(vh) + c.eps) - lr * c.weight_decay * p;
    }
};

}  // namespace

TEST_SUITE("optim") {

TEST_CASE("adamw: decay only") {
    std::vector<double> p{1.0}, g{0.0};
    AdamMoments<double> st;
    adamw_step<double>(p, g, st, 0.1, AdamWConfig{});
    CHECK(p[0] == doctest::Approx(0.999).epsilon(1e-15));
}

TEST_CASE("adamw: first step is lr / (1 + eps)") {
    AdamWConfig cfg;
    cfg.weight_decay = 0;
    std::vector<double> p{0.0}, g{1.0};
    AdamMoments<double> st;
    adamw_step<double>(p, g, st, 0.1, cfg);
    CHECK(p[0] == doctest::Approx(-0.1 / (1 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("adamw: two steps against a long-double reference") {
    Rng rng(700);
    std::normal_distribution<double> nd;
    AdamWConfig cfg;
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> p(5), g1(5), g2(5);
        for (auto* v : {&p, &g1, &g2})
            for (auto& x : *v) x = nd(rng);
        std::vector<ReferenceAdamW> ref(5);
        std::vector<long double> rp(p.begin(), p.end());
        AdamMoments<double> st;
        adamw_step<double>(p, g1, st, 3e-3, cfg);
        adamw_step<double>(p, g2, st, 1e-3, cfg);
        for (std::size_t i = 0; i < 5; ++i) {
            rp[i] = ref[i].step(rp[i], g1[i], 3e-3, cfg);
            rp[i] = ref[i].step(rp[i], g2[i], 1e-3, cfg);
            CHECK(std::abs(double(rp[i]) - p[i]) < 1e-10);
        }
        CHECK(st.step == 2);
    }
}

TEST_CASE("adamw: skips frozen tensors and no-decay entries") {
    Rng rng(701);
    ParamSet<double> ps;
    auto a = normal_tensor<double>({2, 2}, 1.0, rng);
    auto frozen = normal_tensor<double>({2}, 1.0, rng, false);
    auto bias = normal_tensor<double>({2}, 1.0, rng);
    ps.add("a", a);
    ps.add("frozen", frozen);
    ps.add("bias", bias, false);
    const auto frozen_before = frozen.clone();
    const auto bias_before = bias.clone();
    AdamW<double> opt(ps);
    opt.step(0.1);  // no gradients: only decay moves `a`
    CHECK(frozen[0] == frozen_before[0]);
    CHECK(bias[0] == bias_before[0]);
    CHECK(bias[1] == bias_before[1]);
}

TEST_CASE("onecycle endpoints") {
    OneCycleConfig cfg;
    CHECK(onecycle_lr(0, 1000, cfg) == doctest::Approx(3e-3 / 25).epsilon(1e-15));
    CHECK(onecycle_lr(300, 1000, cfg) == doctest::Approx(3e-3).epsilon(1e-15));
    CHECK(std::abs(onecycle_lr(1000, 1000, cfg) - 3e-3 / 1e4) <= 4 * std::numeric_limits<double>::epsilon() * 3e-3);
    double prev = onecycle_lr(300, 1000, cfg);
    for (std::size_t s = 301; s <= 1000; ++s) {
        const double lr = onecycle_lr(s, 1000, cfg);
        CHECK(lr <= prev);
        prev = lr;
    }
    CHECK_THROWS_AS(onecycle_lr(1001, 1000, cfg), ContractError);
}

TEST_CASE("route weight schedule") {
    CHECK(route_weight(0, 40) == 1.0);
    CHECK(route_weight(39, 40) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(route_weight(20, 40) == doctest::Approx(1 - 0.9 * 20 / 39.0));
    CHECK(route_weight(20, 40) == doctest::Approx(0.538).epsilon(1e-3));
    CHECK(route_weight(0, 1) == 1.0);
    CHECK_THROWS_AS(route_weight(40, 40), ContractError);
}

}  // TEST_SUITE
