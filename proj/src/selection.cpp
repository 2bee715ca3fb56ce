#include "fci/selection.hpp"

#include <algorithm>
#include <numeric>

#include "fci/alt/bloom.hpp"
#include "fci/errors.hpp"
#include "fci/params.hpp"

namespace fci::model {

router::Selection expand_selection(std::vector<std::size_t> top, std::size_t width, std::size_t length) {
    std::sort(top.begin(), top.end());
    top.erase(std::unique(top.begin(), top.end()), top.end());
    router::Selection sel;
    sel.expanded = top;
    for (auto j : top)
        for (std::size_t w = 1; w <= width; ++w) sel.expanded.push_back(std::min(j + w, length - 1));
    std::sort(sel.expanded.begin(), sel.expanded.end());
    sel.expanded.erase(std::unique(sel.expanded.begin(), sel.expanded.end()), sel.expanded.end());
    sel.top = std::move(top);
    return sel;
}

namespace {

class OracleSource final : public SelectionSource {
  public:
    explicit OracleSource(router::RouterConfig cfg) : cfg_(cfg) {}
    router::Selection select(const tasks::Sample& s, std::size_t, bool) override {
        return expand_selection({s.key_pos}, cfg_.neighbor_width, s.tokens.size());
    }
    std::string name() const override { return "oracle"; }

  private:
    router::RouterConfig cfg_;
};

class RandomSource final : public SelectionSource {
  public:
    RandomSource(router::RouterConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {}
    router::Selection select(const tasks::Sample& s, std::size_t index, bool training) override {
        const std::size_t len = s.tokens.size();
        cfg_.validate(len);
        Rng rng(derive_seed(seed_, 2 * index + (training ? 1 : 0)));
        std::vector<std::size_t> pool(len);
        std::iota(pool.begin(), pool.end(), 0);
        pool.erase(pool.begin() + long(s.query_pos));
        for (std::size_t i = 0; i < cfg_.k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
            std::swap(pool[i], pool[pick(rng)]);
        }
        pool.resize(cfg_.k);
        return expand_selection(std::move(pool), cfg_.neighbor_width, len);
    }
    std::string name() const override { return "random"; }

  private:
    router::RouterConfig cfg_;
    std::uint64_t seed_;
};

class BloomSource final : public SelectionSource {
  public:
    BloomSource(router::RouterConfig cfg, std::size_t width) : cfg_(cfg), width_(width) {}
    router::Selection select(const tasks::Sample& s, std::size_t, bool) override {
        auto index = alt::bloom_build(s.tokens, width_);
        const std::size_t excl[] = {s.query_pos};
        auto route = alt::bloom_route(index, s.query_token(), cfg_.k, excl);
        router::Selection sel;
        sel.expanded = route.selected;
        // pre-expansion: the matches and the padding, not the match neighbours
        for (auto p : route.selected) {
            const bool matched = std::find(route.matched.begin(), route.matched.end(), p) != route.matched.end();
            const bool neighbour =
                p > 0 && std::find(route.matched.begin(), route.matched.end(), p - 1) != route.matched.end();
            if (matched || !neighbour) sel.top.push_back(p);
        }
        return sel;
    }
    std::string name() const override { return "bloom"; }

  private:
    router::RouterConfig cfg_;
    std::size_t width_;
};

class BanditSource final : public SelectionSource {
  public:
    BanditSource(router::RouterConfig cfg, BanditConfig bandit, const Tensor<float>& tokens,
                 const Tensor<float>& positions, std::uint64_t seed)
        : cfg_(cfg),
          bandit_(bandit),
          tokens_(tokens.clone()),
          positions_(positions.numel() ? positions.clone() : Tensor<float>()),
          state_(bandit.context_dim, bandit.lambda),
          seed_(derive_seed(seed, 0xBA4D17)) {
        const std::size_t d = tokens_.cols();
        Rng proj_rng(derive_seed(seed, 0x960EC7));
        std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(2.0 * double(d)));
        projection_.resize(Eigen::Index(bandit.context_dim), Eigen::Index(2 * d));
        for (Eigen::Index i = 0; i < projection_.size(); ++i) projection_.data()[i] = nd(proj_rng);
    }

    router::Selection select(const tasks::Sample& s, std::size_t index, bool training) override {
        const std::size_t len = s.tokens.size(), d = tokens_.cols();
        cfg_.validate(len);
        Eigen::MatrixXd reps(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(d));
        for (std::size_t p = 0; p < len; ++p)
            for (std::size_t c = 0; c < d; ++c)
                reps(Eigen::Index(p), Eigen::Index(c)) =
                    double(tokens_.at(s.tokens[p], c)) + (positions_.numel() ? double(positions_.at(p, c)) : 0.0);
        // [x_j, x_q] P^T = x_j P_left^T + x_q P_right^T
        const auto left = projection_.leftCols(Eigen::Index(d));
        const auto right = projection_.rightCols(Eigen::Index(d));
        const Eigen::RowVectorXd query_part = reps.row(Eigen::Index(s.query_pos)) * right.transpose();
        alt::Contexts ctx(static_cast<Eigen::Index>(len - 1), static_cast<Eigen::Index>(bandit_.context_dim));
        std::vector<std::size_t> arm_pos;
        for (std::size_t p = 0, r = 0; p < len; ++p) {
            if (p == s.query_pos) continue;
            ctx.row(Eigen::Index(r++)) = reps.row(Eigen::Index(p)) * left.transpose() + query_part;
            arm_pos.push_back(p);
        }
        std::vector<double> scores;
        switch (bandit_.kind) {
            case BanditKind::linucb: scores = alt::linucb_scores(state_, ctx, bandit_.alpha); break;
            case BanditKind::oful: scores = alt::oful_scores(state_, ctx, bandit_.oful); break;
            case BanditKind::thompson: {
                // the draw depends on the sample and the posterior only, so held-out passes are repeatable
                Rng rng(derive_seed(derive_seed(seed_, 2 * index + (training ? 1 : 0)), updates_));
                scores = alt::thompson_scores(state_, ctx, bandit_.sigma2, rng);
                break;
            }
        }
        std::vector<std::size_t> top;
        for (auto arm : alt::top_arms(scores, cfg_.k)) {
            top.push_back(arm_pos[arm]);
            if (training) state_.update(ctx.row(Eigen::Index(arm)).transpose(), arm_pos[arm] == s.key_pos ? 1.0 : 0.0);
        }
        if (training) ++updates_;
        return expand_selection(std::move(top), cfg_.neighbor_width, len);
    }

    std::string name() const override {
        switch (bandit_.kind) {
            case BanditKind::linucb: return "linucb";
            case BanditKind::thompson: return "thompson";
            case BanditKind::oful: return "oful";
        }
        return "bandit";
    }

  private:
    router::RouterConfig cfg_;
    BanditConfig bandit_;
    Tensor<float> tokens_, positions_;
    Eigen::MatrixXd projection_;
    alt::LinearBanditState state_;
    std::uint64_t seed_;
    std::uint64_t updates_ = 0;
};

}  // namespace

std::unique_ptr<SelectionSource> make_oracle_source(const router::RouterConfig& cfg) {
    return std::make_unique<OracleSource>(cfg);
}

std::unique_ptr<SelectionSource> make_random_source(const router::RouterConfig& cfg, std::uint64_t seed) {
    return std::make_unique<RandomSource>(cfg, seed);
}

std::unique_ptr<SelectionSource> make_bloom_source(const router::RouterConfig& cfg, std::size_t segment_width) {
    if (segment_width == 0) throw ConfigError("bloom source: segment width must be >= 1");
    return std::make_unique<BloomSource>(cfg, segment_width);
}

std::unique_ptr<SelectionSource> make_bandit_source(const router::RouterConfig& cfg, const BanditConfig& bandit,
                                                    const Tensor<float>& token_table,
                                                    const Tensor<float>& position_table, std::uint64_t seed) {
    if (bandit.context_dim == 0) throw ConfigError("bandit source: context_dim must be >= 1");
    return std::make_unique<BanditSource>(cfg, bandit, token_table, position_table, seed);
}

}  // namespace fci::model
