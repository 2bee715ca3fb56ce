#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>

#include "fci/alt/bandit.hpp"
#include "fci/router.hpp"
#include "fci/tasks.hpp"
#include "fci/tensor.hpp"

namespace fci::model {

/// Selections produced outside the model: index lookups, bandits, baselines.
class SelectionSource {
  public:
    virtual ~SelectionSource() = default;
    /// `index` identifies the sample within its split; `training` marks the
    /// training split, the only place where online sources may update.
    virtual router::Selection select(const tasks::Sample& s, std::size_t index, bool training) = 0;
    virtual std::string name() const = 0;
};

/// Adds j + 1 .. j + width for every j in `top`, clipped at length - 1.
router::Selection expand_selection(std::vector<std::size_t> top, std::size_t width, std::size_t length);

/// The gold key alone.
std::unique_ptr<SelectionSource> make_oracle_source(const router::RouterConfig& cfg);

/// k positions uniformly without replacement, excluding the query.
std::unique_ptr<SelectionSource> make_random_source(const router::RouterConfig& cfg, std::uint64_t seed);

/// Exact token match through per-segment Bloom filters.
std::unique_ptr<SelectionSource> make_bloom_source(const router::RouterConfig& cfg, std::size_t segment_width);

enum class BanditKind { linucb, thompson, oful };

struct BanditConfig {
    BanditKind kind = BanditKind::linucb;
    std::size_t context_dim = 32;
    double alpha = 1.0;   // LinUCB width
    double lambda = 1.0;
    double sigma2 = 1.0;  // Thompson posterior scale
    alt::OfulParams oful{};
};

/// Arms are the non-query positions. An arm's context is a fixed random
/// projection of [x_j, x_q], where x are the frozen token (+ position)
/// embeddings given here. The top k arms are played; each pays 1 iff it is
/// the gold key. Updates happen on training samples only.
std::unique_ptr<SelectionSource> make_bandit_source(const router::RouterConfig& cfg, const BanditConfig& bandit,
                                                    const Tensor<float>& token_table,
                                                    const Tensor<float>& position_table, std::uint64_t seed);

}  // namespace fci::model
