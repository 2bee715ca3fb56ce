#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fci/corpus.hpp"
#include "fci/model.hpp"
#include "fci/selection.hpp"
#include "fci/tasks.hpp"
#include "fci/training.hpp"

namespace fci::experiments {

enum class Preprocessing { none, raw_embed, content_embed, transformer, flow, flow_bidir, linear_attn };

enum class RouterChoice {
    investigator,
    investigator_random_proj,
    bloom,
    bm25,
    linucb,
    thompson,
    oful,
    segment_mean,
    segment_max,
    contrastive_frozen,
    contrastive_finetune,
    oracle,
    random,
};

std::string to_string(Preprocessing p);
std::string to_string(RouterChoice r);
Preprocessing parse_preprocessing(const std::string& s);
RouterChoice parse_router(const std::string& s);

/// paper: n_train 8000, L 512, epochs 40, min_dist 200. desk: n_train 2000, L 256, epochs 20,
/// min_dist 100. ci: n_train 1000, L 128, epochs 10, min_dist 50, n_eval 200.
enum class Scale { paper, desk, ci };
std::string to_string(Scale s);
Scale parse_scale(const std::string& s);

struct ExperimentSpec {
    std::string name;
    std::string description;
    tasks::TaskKind task = tasks::TaskKind::distant;
    Preprocessing preprocessing = Preprocessing::transformer;
    std::size_t layers = 1;
    RouterChoice router = RouterChoice::investigator;
    training::TrainConfig train{};
    tasks::DistantConfig distant{};
    tasks::MqarConfig mqar{};
    std::size_t corpus_items = 200;
    std::size_t d_model = 128;
    std::size_t heads = 4;
    std::size_t k = 8;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    Scale scale = Scale::paper;
    /// The condition is our own reading of a loosely described setup.
    bool interpretation = false;

    /// Router, preprocessing and task must fit together; throws ValidationError.
    void validate() const;
    std::size_t sequence_length() const;
    bool operator==(const ExperimentSpec&) const;
};

/// Rewrite sizes for a scale. Applied to a paper-scale spec; idempotent.
ExperimentSpec apply_scale(ExperimentSpec spec, Scale scale);

/// Every registered condition at paper scale, in a fixed order.
const std::vector<ExperimentSpec>& registry();
/// Throws ConfigError naming the unknown condition.
ExperimentSpec find_spec(const std::string& name);

/// key = value lines; '#' starts a comment. Unknown keys and malformed values
/// are ConfigErrors carrying the line number. `name` may refer to a registry
/// entry, whose values the remaining keys then override.
ExperimentSpec parse_spec_text(const std::string& text);
ExperimentSpec load_spec(const std::filesystem::path& path);
std::string spec_to_text(const ExperimentSpec& spec);

nlohmann::json spec_to_json(const ExperimentSpec& spec);
ExperimentSpec spec_from_json(const nlohmann::json& j);

struct SpectrumSummary {
    std::size_t effective_rank = 0;
    double threshold = 0.9;
    std::vector<double> singular_values;
};

struct SeedResult {
    std::uint64_t seed = 0;
    std::vector<training::EpochRecord> history;
    bool aborted = false;
    std::string abort_reason;
    double routing_precision = 0;
    double expanded_precision = 0;
    double task_accuracy = 0;
    std::optional<std::size_t> phase_epoch;
    std::optional<double> cosine_gap;
    std::optional<SpectrumSummary> spectrum;
    /// Held-out precision after replacing the trained projections with random ones.
    std::optional<double> random_projection_precision;
    /// Learned conditions: precision before training.
    std::optional<double> initial_precision;
    /// Corpus task: fraction of items whose retrieved segments include a gold one.
    std::optional<double> hit_rate;
    /// Contrastive conditions: mean InfoNCE loss per pretraining epoch.
    std::vector<double> contrastive_loss;
};

struct ExperimentResult {
    ExperimentSpec spec;
    std::vector<SeedResult> seeds;
    std::string version;
    double wall_clock_seconds = 0;
    std::string timestamp;

    double mean_precision() const;
    double mean_accuracy() const;
};

struct RunOptions {
    /// Where result files go; empty disables persistence. FCI_RESULTS_DIR, when
    /// set, replaces the default.
    std::filesystem::path results_dir;
    bool persist = true;
    /// Per-seed checkpoints (router conditions with a model only).
    bool save_checkpoints = false;
    std::function<void(std::uint64_t seed, const training::EpochRecord&)> on_epoch;
    std::function<void(const std::string&)> log;
};

/// Default results root: $FCI_RESULTS_DIR or ./results.
std::filesystem::path default_results_dir();

/// The model a spec trains; its parameters line up with saved checkpoints.
model::ModelConfig model_config_for(const ExperimentSpec& spec);
/// Selection source for index, bandit and baseline routers; null for learned ones.
std::unique_ptr<model::SelectionSource> make_selection_source(const ExperimentSpec& spec, const model::FciModel& m,
                                                              std::uint64_t seed);

ExperimentResult run_experiment(const ExperimentSpec& spec, const RunOptions& options = {});

/// Deterministic part of a result file.
nlohmann::json result_to_json(const ExperimentResult& result, bool include_timing = true);
ExperimentResult result_from_json(const nlohmann::json& j);
/// Writes <dir>/<name>/<name>-<timestamp>[-n].json, never overwriting.
std::filesystem::path write_result(const ExperimentResult& result, const std::filesystem::path& dir);

struct LandscapeRow {
    std::string name;
    std::string scale;
    std::size_t seeds = 0;
    double precision_mean = 0, precision_min = 0, precision_max = 0;
    double accuracy_mean = 0, accuracy_min = 0, accuracy_max = 0;
};

struct Landscape {
    std::vector<LandscapeRow> rows;  // descending precision
    std::size_t skipped_files = 0;
    std::vector<std::string> warnings;
};

/// Newest result per (condition, scale) under `dir`, one row each.
Landscape aggregate_landscape(const std::filesystem::path& dir);
std::string landscape_csv(const Landscape& l);
nlohmann::json landscape_json(const Landscape& l);

/// Corpus retrieval precision of BM25 or of the random baseline.
struct CorpusScore {
    double segment_precision = 0;  // |retrieved ∩ gold| / retrieved, averaged over items
    double hit_rate = 0;           // retrieved ∩ gold nonempty
};
CorpusScore score_bm25(const tasks::SegmentedCorpus& corpus, std::size_t top_m = 2);
CorpusScore score_random_retrieval(const tasks::SegmentedCorpus& corpus, std::uint64_t seed, std::size_t top_m = 2);

std::string version_string();

}  // namespace fci::experiments
