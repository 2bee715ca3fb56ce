#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fci/errors.hpp"
#include "fci/experiments.hpp"

using namespace fci;
using namespace fci::experiments;

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

ExperimentSpec micro(const std::string& name) {
    auto s = apply_scale(find_spec(name), Scale::ci);
    s.train.n_train = 16;
    s.train.batch = 8;
    s.train.epochs = 2;
    s.train.n_eval = 8;
    s.distant.length = 40;
    s.distant.min_dist = 12;
    s.distant.window = 6;
    s.distant.n_distractors = 2;
    s.mqar.length = 40;
    s.mqar.n_pairs = 8;
    s.d_model = 16;
    s.heads = 2;
    s.k = 4;
    s.seeds = {0};
    s.corpus_items = 20;
    return s;
}

}  // namespace

TEST_SUITE("experiments") {

TEST_CASE("registry entries are unique and valid at every scale") {
    std::set<std::string> names;
    for (const auto& s : registry()) {
        CAPTURE(s.name);
        CHECK(names.insert(s.name).second);
        CHECK(s.scale == Scale::paper);
        for (auto sc : {Scale::paper, Scale::desk, Scale::ci}) CHECK_NOTHROW(apply_scale(s, sc).validate());
    }
    CHECK(registry().size() >= 20);
    CHECK_THROWS_AS(find_spec("no-such-condition"), ConfigError);
}

TEST_CASE("scales rewrite sizes idempotently") {
    auto s = find_spec("transformer1L");
    CHECK(s.sequence_length() == 512);
    auto desk = apply_scale(s, Scale::desk);
    CHECK(desk.train.n_train == 2000);
    CHECK(desk.sequence_length() == 256);
    CHECK(desk.distant.min_dist == 100);
    CHECK(apply_scale(desk, Scale::desk) == desk);
    CHECK(apply_scale(apply_scale(s, Scale::ci), Scale::paper) == s);
}

TEST_CASE("incompatible combinations are rejected") {
    auto s = find_spec("transformer1L");
    s.router = RouterChoice::bm25;
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s = find_spec("bm25-corpus");
    s.router = RouterChoice::investigator;
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s = find_spec("linucb");
    s.preprocessing = Preprocessing::transformer;
    s.layers = 1;
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s = find_spec("transformer0L");
    s.layers = 2;
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s = find_spec("transformer1L");
    s.seeds.clear();
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s = find_spec("transformer1L");
    s.k = 600;
    CHECK_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("spec text round trip") {
    for (const auto& s : registry()) {
        CAPTURE(s.name);
        CHECK(parse_spec_text(spec_to_text(s)) == s);
        CHECK(spec_from_json(spec_to_json(s)) == s);
    }
    auto odd = find_spec("flow2");
    odd.train.schedule.max_lr = 0.1 + 0.2;
    odd.seeds = {7, 11};
    CHECK(parse_spec_text(spec_to_text(odd)) == odd);
}

TEST_CASE("spec text inherits from the registry and applies overrides") {
    auto s = parse_spec_text("# a comment\nname = transformer2L\nscale = desk\nepochs = 3  # trailing\nseeds = 4, 5\n");
    CHECK(s.layers == 2);
    CHECK(s.train.n_train == 2000);
    CHECK(s.train.epochs == 3);
    CHECK(s.seeds == std::vector<std::uint64_t>{4, 5});
}

TEST_CASE("spec text errors carry the line number") {
    auto message = [](const std::string& text) {
        try {
            parse_spec_text(text);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message("name = flow2\nbogus = 1\n").find("line 2") != std::string::npos);
    CHECK(message("name = flow2\n\nepochs = many\n").find("line 3") != std::string::npos);
    CHECK(message("name = flow2\nrouter = telepathy\n").find("telepathy") != std::string::npos);
    CHECK(message("no equals sign\n").find("line 1") != std::string::npos);
    CHECK_FALSE(message("").empty());
    CHECK_THROWS_AS(load_spec("/nonexistent/spec.cfg"), ConfigError);
}

TEST_CASE("a tiny run is reproducible and its result file round trips") {
    TempDir dir("fci_exp_run");
    RunOptions opt;
    opt.results_dir = dir.path;
    auto spec = micro("transformer1L");
    std::size_t epochs_seen = 0;
    opt.on_epoch = [&](std::uint64_t, const training::EpochRecord&) { ++epochs_seen; };
    auto a = run_experiment(spec, opt);
    opt.persist = false;
    auto b = run_experiment(spec, opt);
    CHECK(epochs_seen == 4);
    CHECK(result_to_json(a, false) == result_to_json(b, false));
    REQUIRE(a.seeds.size() == 1);
    CHECK(a.seeds[0].history.size() == 2);
    CHECK(a.seeds[0].spectrum.has_value());
    CHECK(a.seeds[0].cosine_gap.has_value());
    CHECK(a.seeds[0].random_projection_precision.has_value());

    std::size_t files = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir.path)) {
        if (!e.is_regular_file()) continue;
        ++files;
        std::ifstream in(e.path());
        auto back = result_from_json(nlohmann::json::parse(in));
        CHECK(result_to_json(back) == result_to_json(a));
    }
    CHECK(files == 1);
}

TEST_CASE("every router family runs end to end") {
    for (const char* name : {"oracle", "random", "bloom", "linucb", "thompson", "oful", "segment-mean",
                             "contrastive-frozen", "contrastive-finetune", "investigator-random-proj", "mqar-raw",
                             "bm25-corpus", "random-corpus", "content-embed"}) {
        const std::string label = name;
        CAPTURE(label);
        RunOptions opt;
        opt.persist = false;
        auto r = run_experiment(micro(name), opt);
        REQUIRE(r.seeds.size() == 1);
        CHECK(r.seeds[0].routing_precision >= 0.0);
        CHECK(r.seeds[0].routing_precision <= 1.0);
        if (std::string(name) == "oracle") CHECK(r.seeds[0].routing_precision == 1.0);
        if (std::string(name) == "bloom") CHECK(r.seeds[0].routing_precision == 1.0);
        if (std::string(name).find("contrastive") == 0) CHECK(r.seeds[0].contrastive_loss.size() == 5);
        if (std::string(name).find("corpus") != std::string::npos) CHECK(r.seeds[0].hit_rate.has_value());
    }
}

TEST_CASE("landscape keeps the newest result and skips corrupt files") {
    TempDir dir("fci_exp_land");
    ExperimentResult older, newer, other;
    older.spec = newer.spec = find_spec("transformer1L");
    other.spec = find_spec("random");
    older.timestamp = "20260101T000000.000Z";
    newer.timestamp = "20260201T000000.000Z";
    other.timestamp = older.timestamp;
    for (auto* r : {&older, &newer, &other}) r->version = version_string();
    SeedResult s;
    s.routing_precision = 0.2;
    s.task_accuracy = 0.1;
    older.seeds = {s};
    s.routing_precision = 0.9;
    newer.seeds = {s, s};
    s.routing_precision = 0.5;
    other.seeds = {s};
    write_result(older, dir.path);
    write_result(newer, dir.path);
    write_result(other, dir.path);
    std::ofstream(dir.path / "broken.json") << "{ not json";
    std::ofstream(dir.path / "old-schema.json") << R"({"schema": 99})";

    auto land = aggregate_landscape(dir.path);
    CHECK(land.skipped_files == 2);
    CHECK(land.warnings.size() == 2);
    REQUIRE(land.rows.size() == 2);
    CHECK(land.rows[0].name == "transformer1L");
    CHECK(land.rows[0].seeds == 2);
    CHECK(land.rows[0].precision_mean == doctest::Approx(0.9));
    CHECK(land.rows[1].name == "random");
    const auto csv = landscape_csv(land);
    CHECK(csv.rfind("name,scale,seeds,precision_mean", 0) == 0);
    CHECK(landscape_json(land)["rows"].size() == 2);

    TempDir empty("fci_exp_empty");
    CHECK_THROWS_AS(aggregate_landscape(empty.path), ConfigError);
    CHECK_THROWS_AS(aggregate_landscape(empty.path / "missing"), ConfigError);
}

TEST_CASE("write_result never overwrites") {
    TempDir dir("fci_exp_write");
    ExperimentResult r;
    r.spec = find_spec("oracle");
    r.timestamp = "20260101T000000.000Z";
    auto p1 = write_result(r, dir.path);
    auto p2 = write_result(r, dir.path);
    CHECK(p1 != p2);
    CHECK(std::filesystem::exists(p1));
    CHECK(std::filesystem::exists(p2));
}

TEST_CASE("BM25 beats random retrieval on the synthetic corpus") {
    tasks::SyntheticCorpusConfig cfg;
    cfg.items = 100;
    const auto corpus = tasks::gen_synthetic_corpus(cfg, 5);
    const auto bm = score_bm25(corpus);
    const auto rnd = score_random_retrieval(corpus, 6);
    CHECK(bm.segment_precision > 0.8);
    CHECK(bm.hit_rate >= bm.segment_precision);
    CHECK(rnd.segment_precision == doctest::Approx(2.0 / 16.0).epsilon(0.6));
    CHECK(score_random_retrieval(corpus, 6).segment_precision == rnd.segment_precision);
}

}  // TEST_SUITE
