// fci: data generation, training runs, evaluation and result aggregation.
// Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "fci/analysis.hpp"
#include "fci/corpus.hpp"
#include "fci/dataset.hpp"
#include "fci/errors.hpp"
#include "fci/experiments.hpp"
#include "fci/training.hpp"

namespace fs = std::filesystem;
using namespace fci;
using namespace fci::experiments;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct SpecArgs {
    std::string config;
    std::string condition;
    std::string scale;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "spec file (key = value lines)");
        app->add_option("--condition", condition, "registered condition name");
        app->add_option("--scale", scale, "paper | desk | ci");
        app->add_option("--seed", seed, "run this seed only");
    }

    ExperimentSpec resolve() const {
        if (config.empty() == condition.empty()) throw ConfigError("give exactly one of --config or --condition");
        ExperimentSpec spec;
        if (!config.empty()) {
            if (!fs::exists(config)) throw ConfigError("config file not found: " + config);
            spec = load_spec(config);
        } else {
            spec = find_spec(condition);
        }
        if (!scale.empty()) spec = apply_scale(spec, parse_scale(scale));
        if (seed) spec.seeds = {*seed};
        spec.validate();
        return spec;
    }
};

void print_epoch(std::uint64_t seed, const training::EpochRecord& r) {
    std::printf("seed %llu epoch %3zu  precision %.3f  expanded %.3f  accuracy %.3f  loss %.4f  lr %.2e  w %.2f\n",
                static_cast<unsigned long long>(seed), r.epoch, r.routing_precision, r.expanded_precision,
                r.task_accuracy, r.total_loss, r.learning_rate, r.route_weight);
    std::fflush(stdout);
}

int cmd_gen_data(const std::string& task, std::size_t n, std::uint64_t seed, const std::string& scale,
                 const std::string& out) {
    auto spec = apply_scale(ExperimentSpec{}, parse_scale(scale.empty() ? "paper" : scale));
    const auto kind = tasks::parse_task(task);
    tasks::SequenceBatch batch;
    if (kind == tasks::TaskKind::distant)
        batch = tasks::gen_distant_evidence(n, spec.distant, seed);
    else if (kind == tasks::TaskKind::mqar)
        batch = tasks::gen_mqar(n, spec.mqar, seed);
    else
        throw ConfigError("gen-data makes sequence tasks; use gen-corpus for the corpus");
    tasks::write_dataset(batch, out);
    std::printf("wrote %zu %s sequences of length %zu to %s\n", batch.samples.size(), task.c_str(), batch.length,
                out.c_str());
    return 0;
}

int cmd_gen_corpus(std::size_t items, std::uint64_t seed, const std::string& out) {
    tasks::SyntheticCorpusConfig cfg;
    cfg.items = items;
    tasks::save_segmented_corpus(tasks::gen_synthetic_corpus(cfg, seed), out);
    std::printf("wrote %zu corpus items to %s\n", items, out.c_str());
    return 0;
}

int cmd_train(const SpecArgs& args, const std::string& out, bool checkpoints, bool quiet) {
    const auto spec = args.resolve();
    RunOptions opt;
    opt.results_dir = out.empty() ? default_results_dir() : fs::path(out);
    opt.save_checkpoints = checkpoints;
    if (!quiet) opt.on_epoch = print_epoch;
    opt.log = [](const std::string& line) { std::printf("%s\n", line.c_str()); };
    std::printf("%s  %s  scale=%s  L=%zu  n_train=%zu  epochs=%zu\n", spec.name.c_str(), spec.description.c_str(),
                to_string(spec.scale).c_str(), spec.sequence_length(), spec.train.n_train, spec.train.epochs);
    const auto r = run_experiment(spec, opt);
    for (const auto& s : r.seeds) {
        std::printf("seed %llu: precision %.4f  accuracy %.4f%s\n", static_cast<unsigned long long>(s.seed),
                    s.routing_precision, s.task_accuracy, s.aborted ? ("  ABORTED: " + s.abort_reason).c_str() : "");
    }
    std::printf("mean precision %.4f  mean accuracy %.4f  (%.1f s)\n", r.mean_precision(), r.mean_accuracy(),
                r.wall_clock_seconds);
    for (const auto& s : r.seeds)
        if (s.aborted) return kRuntime;
    return 0;
}

int cmd_eval(const SpecArgs& args, const std::string& checkpoint, const std::string& data) {
    auto spec = args.resolve();
    if (!fs::exists(data)) throw ConfigError("dataset not found: " + data);
    const auto batch = tasks::read_dataset(data);
    if (batch.length != spec.sequence_length())
        throw ConfigError("dataset length " + std::to_string(batch.length) + " does not match the spec's " +
                          std::to_string(spec.sequence_length()));
    const auto seed = spec.seeds.front();
    model::FciModel m(model_config_for(spec), derive_seed(seed, 3));
    if (!checkpoint.empty()) {
        if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint);
        m.params().load(checkpoint);
    }
    auto source = make_selection_source(spec, m, seed);
    const auto r = training::evaluate(m, batch, source.get());
    std::printf("%s on %zu sequences: precision %.4f  expanded %.4f  accuracy %.4f\n", spec.name.c_str(),
                batch.samples.size(), r.routing_precision, r.expanded_precision, r.task_accuracy);
    return 0;
}

int cmd_analyze(const std::string& result_path) {
    if (!fs::exists(result_path)) throw ConfigError("result file not found: " + result_path);
    std::ifstream in(result_path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(result_path + ": " + e.what());
    }
    const auto r = result_from_json(j);
    std::printf("%s (%s) %s\n", r.spec.name.c_str(), to_string(r.spec.scale).c_str(), r.version.c_str());
    for (const auto& s : r.seeds) {
        std::printf("seed %llu  precision %.4f  accuracy %.4f", static_cast<unsigned long long>(s.seed),
                    s.routing_precision, s.task_accuracy);
        if (s.initial_precision) std::printf("  initial %.4f", *s.initial_precision);
        if (s.phase_epoch) std::printf("  phase epoch %zu", *s.phase_epoch);
        if (s.cosine_gap) std::printf("  cosine gap %.4f", *s.cosine_gap);
        if (s.spectrum) std::printf("  rank@%.2f %zu", s.spectrum->threshold, s.spectrum->effective_rank);
        if (s.random_projection_precision) std::printf("  random-proj %.4f", *s.random_projection_precision);
        if (s.hit_rate) std::printf("  hit rate %.4f", *s.hit_rate);
        std::printf("\n");
    }
    std::printf("mean precision %.4f  mean accuracy %.4f\n", r.mean_precision(), r.mean_accuracy());
    return 0;
}

int cmd_landscape(const std::string& dir, const std::string& out) {
    const auto land = aggregate_landscape(dir.empty() ? default_results_dir() : fs::path(dir));
    for (const auto& w : land.warnings) std::fprintf(stderr, "warning: skipped %s\n", w.c_str());
    std::printf("%-28s %-6s %5s %10s %10s\n", "condition", "scale", "seeds", "precision", "accuracy");
    for (const auto& r : land.rows)
        std::printf("%-28s %-6s %5zu %10.4f %10.4f\n", r.name.c_str(), r.scale.c_str(), r.seeds, r.precision_mean,
                    r.accuracy_mean);
    if (!out.empty()) {
        std::ofstream(out + ".csv") << landscape_csv(land);
        std::ofstream(out + ".json") << landscape_json(land).dump(2) << "\n";
        std::printf("wrote %s.csv and %s.json\n", out.c_str(), out.c_str());
    }
    return 0;
}

int cmd_registry_list() {
    for (const auto& s : registry())
        std::printf("%-28s %s\n", s.name.c_str(), s.description.c_str());
    return 0;
}

int cmd_registry_show(const std::string& name, const std::string& scale) {
    auto spec = find_spec(name);
    if (!scale.empty()) spec = apply_scale(spec, parse_scale(scale));
    std::printf("%s", spec_to_text(spec).c_str());
    return 0;
}

int cmd_bm25_eval(const std::string& corpus_path, std::size_t top_m, std::uint64_t seed) {
    if (!fs::exists(corpus_path)) throw ConfigError("corpus file not found: " + corpus_path);
    const auto corpus = tasks::load_segmented_corpus(corpus_path);
    const auto bm = score_bm25(corpus, top_m);
    const auto rnd = score_random_retrieval(corpus, seed, top_m);
    std::printf("%zu items, top %zu\n", corpus.items.size(), top_m);
    std::printf("bm25    precision %.4f  hit rate %.4f\n", bm.segment_precision, bm.hit_rate);
    std::printf("random  precision %.4f  hit rate %.4f\n", rnd.segment_precision, rnd.hit_rate);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Investigator/Council routing experiments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", version_string());

    auto* gen = app.add_subcommand("gen-data", "generate a sequence dataset file");
    std::string gen_task = "distant", gen_scale, gen_out;
    std::size_t gen_n = 1000;
    std::uint64_t gen_seed = 0;
    gen->add_option("--task", gen_task, "distant | mqar");
    gen->add_option("--n", gen_n, "number of sequences");
    gen->add_option("--seed", gen_seed);
    gen->add_option("--scale", gen_scale, "paper | desk | ci (sets the sequence sizes)");
    gen->add_option("--out", gen_out, "output file")->required();

    auto* gc = app.add_subcommand("gen-corpus", "generate a synthetic segmented corpus (JSON lines)");
    std::size_t gc_items = 200;
    std::uint64_t gc_seed = 0;
    std::string gc_out;
    gc->add_option("--items", gc_items);
    gc->add_option("--seed", gc_seed);
    gc->add_option("--out", gc_out)->required();

    auto* train = app.add_subcommand("train", "run a condition over its seeds and write a result file");
    SpecArgs train_args;
    train_args.attach(train);
    std::string train_out;
    bool train_ckpt = false, train_quiet = false;
    train->add_option("--out", train_out, "results directory (default $FCI_RESULTS_DIR or ./results)");
    train->add_flag("--checkpoints", train_ckpt, "save per-seed parameter checkpoints");
    train->add_flag("--quiet", train_quiet, "no per-epoch lines");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (or a fresh model) on a dataset file");
    SpecArgs eval_args;
    eval_args.attach(eval);
    std::string eval_ckpt, eval_data;
    eval->add_option("--checkpoint", eval_ckpt);
    eval->add_option("--data", eval_data, "dataset written by gen-data")->required();

    auto* analyze = app.add_subcommand("analyze", "summarise a result file");
    std::string analyze_path;
    analyze->add_option("result", analyze_path)->required();

    auto* land = app.add_subcommand("landscape", "aggregate result files into one ranked table");
    std::string land_dir, land_out;
    land->add_option("--results", land_dir, "results directory");
    land->add_option("--out", land_out, "write <out>.csv and <out>.json");

    auto* reg = app.add_subcommand("registry", "registered conditions");
    reg->require_subcommand(1);
    auto* reg_list = reg->add_subcommand("list", "list conditions");
    auto* reg_show = reg->add_subcommand("show", "print a condition as a spec file");
    std::string show_name, show_scale;
    reg_show->add_option("name", show_name)->required();
    reg_show->add_option("--scale", show_scale);

    auto* bm = app.add_subcommand("bm25-eval", "BM25 and random retrieval on a segmented corpus");
    std::string bm_corpus = "data/synthetic_corpus.jsonl";
    std::size_t bm_top = 2;
    std::uint64_t bm_seed = 0;
    bm->add_option("--corpus", bm_corpus);
    bm->add_option("--top", bm_top);
    bm->add_option("--seed", bm_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsage;
    }

    try {
        if (*gen) return cmd_gen_data(gen_task, gen_n, gen_seed, gen_scale, gen_out);
        if (*gc) return cmd_gen_corpus(gc_items, gc_seed, gc_out);
        if (*train) return cmd_train(train_args, train_out, train_ckpt, train_quiet);
        if (*eval) return cmd_eval(eval_args, eval_ckpt, eval_data);
        if (*analyze) return cmd_analyze(analyze_path);
        if (*land) return cmd_landscape(land_dir, land_out);
        if (*reg_list) return cmd_registry_list();
        if (*reg_show) return cmd_registry_show(show_name, show_scale);
        if (*bm) return cmd_bm25_eval(bm_corpus, bm_top, bm_seed);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kRuntime;
    }
    return kUsage;
}
