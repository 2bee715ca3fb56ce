#include "fci/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "fci/alt/bm25.hpp"
#include "fci/alt/contrastive.hpp"
#include "fci/analysis.hpp"
#include "fci/corpus.hpp"
#include "fci/errors.hpp"
#include "fci/model.hpp"
#include "fci/selection.hpp"

#ifndef FCI_VERSION
#define FCI_VERSION "0.0.0"
#endif

namespace fci::experiments {

using nlohmann::json;

std::string version_string() { return std::string("fci ") + FCI_VERSION; }

namespace {

template <typename E, std::size_t N>
std::string name_of(E value, const std::pair<E, const char*> (&table)[N]) {
    for (const auto& [v, n] : table)
        if (v == value) return n;
    return "?";
}

template <typename E, std::size_t N>
E value_of(const std::string& name, const std::pair<E, const char*> (&table)[N], const char* what) {
    for (const auto& [v, n] : table)
        if (name == n) return v;
    std::string options;
    for (const auto& [v, n] : table) options += std::string(options.empty() ? "" : ", ") + n;
    throw ConfigError(std::string("unknown ") + what + " '" + name + "' (expected one of: " + options + ")");
}

const std::pair<Preprocessing, const char*> kPreNames[] = {
    {Preprocessing::none, "none"},
    {Preprocessing::raw_embed, "raw-embed"},
    {Preprocessing::content_embed, "content-embed"},
    {Preprocessing::transformer, "transformer"},
    {Preprocessing::flow, "flow"},
    {Preprocessing::flow_bidir, "flow-bidir"},
    {Preprocessing::linear_attn, "linear-attn"},
};

const std::pair<RouterChoice, const char*> kRouterNames[] = {
    {RouterChoice::investigator, "investigator"},
    {RouterChoice::investigator_random_proj, "investigator-random-proj"},
    {RouterChoice::bloom, "bloom"},
    {RouterChoice::bm25, "bm25"},
    {RouterChoice::linucb, "linucb"},
    {RouterChoice::thompson, "thompson"},
    {RouterChoice::oful, "oful"},
    {RouterChoice::segment_mean, "segment-mean"},
    {RouterChoice::segment_max, "segment-max"},
    {RouterChoice::contrastive_frozen, "contrastive-frozen"},
    {RouterChoice::contrastive_finetune, "contrastive-finetune"},
    {RouterChoice::oracle, "oracle"},
    {RouterChoice::random, "random"},
};

const std::pair<Scale, const char*> kScaleNames[] = {
    {Scale::paper, "paper"},
    {Scale::desk, "desk"},
    {Scale::ci, "ci"},
};

bool is_external(RouterChoice r) {
    switch (r) {
        case RouterChoice::bloom:
        case RouterChoice::linucb:
        case RouterChoice::thompson:
        case RouterChoice::oful:
        case RouterChoice::oracle:
        case RouterChoice::random: return true;
        default: return false;
    }
}

bool is_contrastive(RouterChoice r) {
    return r == RouterChoice::contrastive_frozen || r == RouterChoice::contrastive_finetune;
}

}  // namespace

std::string to_string(Preprocessing p) { return name_of(p, kPreNames); }
std::string to_string(RouterChoice r) { return name_of(r, kRouterNames); }
std::string to_string(Scale s) { return name_of(s, kScaleNames); }
Preprocessing parse_preprocessing(const std::string& s) { return value_of(s, kPreNames, "preprocessing"); }
RouterChoice parse_router(const std::string& s) { return value_of(s, kRouterNames, "router"); }
Scale parse_scale(const std::string& s) { return value_of(s, kScaleNames, "scale"); }

std::size_t ExperimentSpec::sequence_length() const {
    switch (task) {
        case tasks::TaskKind::distant: return distant.length;
        case tasks::TaskKind::mqar: return mqar.length;
        case tasks::TaskKind::corpus: return 0;
    }
    return 0;
}

void ExperimentSpec::validate() const {
    auto fail = [&](const std::string& why) { throw ValidationError("spec '" + name + "': " + why); };
    if (name.empty()) throw ValidationError("spec has no name");
    if (seeds.empty()) fail("no seeds");
    const bool corpus = task == tasks::TaskKind::corpus;
    if (router == RouterChoice::bm25 && !corpus) fail("bm25 requires the corpus task");
    if (corpus && router != RouterChoice::bm25 && router != RouterChoice::random)
        fail("the corpus task supports only the bm25 and random routers");
    if (corpus) {
        if (corpus_items == 0) fail("corpus_items must be >= 1");
        return;
    }
    const bool embed_only = preprocessing == Preprocessing::none || preprocessing == Preprocessing::raw_embed ||
                            preprocessing == Preprocessing::content_embed;
    if (embed_only && layers != 0) fail(to_string(preprocessing) + " preprocessing takes no layers");
    if (!embed_only && preprocessing != Preprocessing::transformer && layers == 0)
        fail(to_string(preprocessing) + " preprocessing needs at least one layer");
    if (is_external(router) && preprocessing != Preprocessing::none && preprocessing != Preprocessing::raw_embed)
        fail(to_string(router) + " does not read learned representations; use preprocessing none");
    if (!is_external(router) && preprocessing == Preprocessing::none)
        fail(to_string(router) + " needs representations; preprocessing none is for index and bandit routers");
    if (d_model == 0 || heads == 0 || d_model % heads != 0) fail("d_model must be a positive multiple of heads");
    try {
        train.validate();
        if (task == tasks::TaskKind::distant) distant.validate();
        if (task == tasks::TaskKind::mqar) mqar.validate();
        router::RouterConfig{k, 1}.validate(sequence_length());
    } catch (const ConfigError& e) {
        fail(e.what());
    }
}

ExperimentSpec apply_scale(ExperimentSpec spec, Scale scale) {
    spec.scale = scale;
    switch (scale) {
        case Scale::paper:
            spec.train.n_train = 8000;
            spec.train.epochs = 40;
            spec.train.n_eval = 500;
            spec.distant.length = 512;
            spec.distant.min_dist = 200;
            spec.mqar.length = 256;
            break;
        case Scale::desk:
            spec.train.n_train = 2000;
            spec.train.epochs = 20;
            spec.train.n_eval = 500;
            spec.distant.length = 256;
            spec.distant.min_dist = 100;
            spec.mqar.length = 256;
            break;
        case Scale::ci:
            spec.train.n_train = 1000;
            spec.train.epochs = 10;
            spec.train.n_eval = 200;
            spec.distant.length = 128;
            spec.distant.min_dist = 50;
            spec.mqar.length = 128;
            break;
    }
    return spec;
}

namespace {

ExperimentSpec make(std::string name, std::string description, tasks::TaskKind task, Preprocessing pre,
                    std::size_t layers, RouterChoice router, bool interpretation = false) {
    ExperimentSpec s;
    s.name = std::move(name);
    s.description = std::move(description);
    s.task = task;
    s.preprocessing = pre;
    s.layers = layers;
    s.router = router;
    s.interpretation = interpretation;
    return apply_scale(s, Scale::paper);
}

std::vector<ExperimentSpec> build_registry() {
    using P = Preprocessing;
    using R = RouterChoice;
    const auto D = tasks::TaskKind::distant;
    std::vector<ExperimentSpec> r;
    r.push_back(make("transformer0L", "raw token + position embeddings into the Investigator", D, P::raw_embed, 0,
                     R::investigator));
    for (std::size_t l = 1; l <= 4; ++l)
        r.push_back(make("transformer" + std::to_string(l) + "L",
                         std::to_string(l) + " non-causal transformer layer(s) before the Investigator", D,
                         P::transformer, l, R::investigator));
    r.push_back(make("content-embed",
                     "interpretation: token embeddings without positions (content-only embedding condition)", D,
                     P::content_embed, 0, R::investigator, true));
    r.push_back(make("flow2", "two causal Flow (selective SSM) blocks", D, P::flow, 2, R::investigator));
    r.push_back(make("flow-bidir", "two bidirectional Flow blocks", D, P::flow_bidir, 2, R::investigator));
    r.push_back(make("linear-attn", "one linear-attention layer", D, P::linear_attn, 1, R::investigator));
    r.push_back(make("segment-mean", "learned routing over mean-pooled 8-token segments of Flow x2 states", D, P::flow,
                     2, R::segment_mean));
    r.push_back(make("segment-max",
                     "interpretation: learned routing over max-pooled 8-token segments of Flow x2 states", D, P::flow,
                     2, R::segment_max, true));
    r.push_back(make("linucb", "LinUCB over position contexts from frozen embeddings", D, P::none, 0, R::linucb));
    r.push_back(make("thompson", "linear Thompson sampling over position contexts", D, P::none, 0, R::thompson));
    r.push_back(make("oful", "OFUL over position contexts", D, P::none, 0, R::oful));
    r.push_back(make("contrastive-frozen", "InfoNCE-pretrained projections over frozen raw embeddings", D,
                     P::raw_embed, 0, R::contrastive_frozen));
    r.push_back(make("contrastive-finetune", "InfoNCE pretraining with the embeddings finetuned jointly", D,
                     P::raw_embed, 0, R::contrastive_finetune));
    r.push_back(make("bloom", "per-segment Bloom filters with exact-match scan", D, P::none, 0, R::bloom));
    r.push_back(make("investigator-random-proj", "trained 1-layer condition with its projections re-drawn at random",
                     D, P::transformer, 1, R::investigator_random_proj));
    r.push_back(make("bm25-corpus", "BM25 over the synthetic segmented corpus, top 2 of 16", tasks::TaskKind::corpus,
                     P::none, 0, R::bm25));
    r.push_back(make("random-corpus", "2 of 16 segments uniformly at random", tasks::TaskKind::corpus, P::none, 0,
                     R::random));
    r.push_back(make("mqar-transformer1L", "MQAR, one transformer layer", tasks::TaskKind::mqar, P::transformer, 1,
                     R::investigator));
    r.push_back(make("mqar-flow2", "MQAR, two Flow blocks", tasks::TaskKind::mqar, P::flow, 2, R::investigator));
    r.push_back(make("mqar-raw", "MQAR, raw embeddings", tasks::TaskKind::mqar, P::raw_embed, 0, R::investigator));
    r.push_back(make("oracle", "sanity: the gold key is always selected", D, P::none, 0, R::oracle));
    r.push_back(make("random", "sanity: k uniformly random positions", D, P::none, 0, R::random));
    auto near = make("near-transformer4L", "sanity: evidence within 16 tokens of the query", D, P::transformer, 4,
                     R::investigator);
    near.distant.near = true;
    r.push_back(near);
    r.push_back(make("far-transformer4L", "sanity: the same model with distant evidence", D, P::transformer, 4,
                     R::investigator));
    return r;
}

}  // namespace

const std::vector<ExperimentSpec>& registry() {
    static const std::vector<ExperimentSpec> r = build_registry();
    return r;
}

ExperimentSpec find_spec(const std::string& name) {
    for (const auto& s : registry())
        if (s.name == name) return s;
    throw ConfigError("unknown condition '" + name + "' (see `registry list`)");
}

// ---------------------------------------------------------------------------
// spec (de)serialisation: one field table drives text and JSON

namespace {

enum class Kind { text, count, real, flag, seeds };

struct Field {
    const char* key;
    Kind kind;
    std::function<json(const ExperimentSpec&)> get;
    std::function<void(ExperimentSpec&, const json&)> set;
};

#define FCI_FIELD(key, kind, expr, type)                                          \
    Field {                                                                       \
        key, kind, [](const ExperimentSpec& s) { return json(s.expr); },          \
            [](ExperimentSpec& s, const json& v) { s.expr = v.get<type>(); }      \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        FCI_FIELD("name", Kind::text, name, std::string),
        FCI_FIELD("description", Kind::text, description, std::string),
        Field{"task", Kind::text, [](const ExperimentSpec& s) { return json(tasks::to_string(s.task)); },
              [](ExperimentSpec& s, const json& v) { s.task = tasks::parse_task(v.get<std::string>()); }},
        Field{"preprocessing", Kind::text, [](const ExperimentSpec& s) { return json(to_string(s.preprocessing)); },
              [](ExperimentSpec& s, const json& v) { s.preprocessing = parse_preprocessing(v.get<std::string>()); }},
        FCI_FIELD("layers", Kind::count, layers, std::size_t),
        Field{"router", Kind::text, [](const ExperimentSpec& s) { return json(to_string(s.router)); },
              [](ExperimentSpec& s, const json& v) { s.router = parse_router(v.get<std::string>()); }},
        Field{"scale", Kind::text, [](const ExperimentSpec& s) { return json(to_string(s.scale)); },
              [](ExperimentSpec& s, const json& v) { s.scale = parse_scale(v.get<std::string>()); }},
        FCI_FIELD("n_train", Kind::count, train.n_train, std::size_t),
        FCI_FIELD("batch", Kind::count, train.batch, std::size_t),
        FCI_FIELD("epochs", Kind::count, train.epochs, std::size_t),
        FCI_FIELD("n_eval", Kind::count, train.n_eval, std::size_t),
        FCI_FIELD("max_lr", Kind::real, train.schedule.max_lr, double),
        FCI_FIELD("pct_start", Kind::real, train.schedule.pct_start, double),
        FCI_FIELD("div_factor", Kind::real, train.schedule.div, double),
        FCI_FIELD("final_div_factor", Kind::real, train.schedule.final_div, double),
        FCI_FIELD("beta1", Kind::real, train.adamw.beta1, double),
        FCI_FIELD("beta2", Kind::real, train.adamw.beta2, double),
        FCI_FIELD("eps", Kind::real, train.adamw.eps, double),
        FCI_FIELD("weight_decay", Kind::real, train.adamw.weight_decay, double),
        FCI_FIELD("length", Kind::count, distant.length, std::size_t),
        FCI_FIELD("min_dist", Kind::count, distant.min_dist, std::size_t),
        FCI_FIELD("n_distractors", Kind::count, distant.n_distractors, std::size_t),
        FCI_FIELD("window", Kind::count, distant.window, std::size_t),
        FCI_FIELD("near", Kind::flag, distant.near, bool),
        FCI_FIELD("near_max_dist", Kind::count, distant.near_max_dist, std::size_t),
        FCI_FIELD("mqar_pairs", Kind::count, mqar.n_pairs, std::size_t),
        FCI_FIELD("mqar_length", Kind::count, mqar.length, std::size_t),
        FCI_FIELD("corpus_items", Kind::count, corpus_items, std::size_t),
        FCI_FIELD("d_model", Kind::count, d_model, std::size_t),
        FCI_FIELD("heads", Kind::count, heads, std::size_t),
        FCI_FIELD("k", Kind::count, k, std::size_t),
        FCI_FIELD("seeds", Kind::seeds, seeds, std::vector<std::uint64_t>),
        FCI_FIELD("interpretation", Kind::flag, interpretation, bool),
    };
    return f;
}

#undef FCI_FIELD

const Field* find_field(const std::string& key) {
    for (const auto& f : fields())
        if (key == f.key) return &f;
    return nullptr;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::uint64_t parse_count(const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("expected a non-negative integer, got '" + v + "'");
    return std::stoull(v);
}

json text_value(const Field& f, const std::string& v) {
    switch (f.kind) {
        case Kind::text: return v;
        case Kind::count: return parse_count(v);
        case Kind::real: {
            std::size_t used = 0;
            double d = 0;
            try {
                d = std::stod(v, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != v.size() || v.empty()) throw ConfigError("expected a number, got '" + v + "'");
            return d;
        }
        case Kind::flag:
            if (v == "true") return true;
            if (v == "false") return false;
            throw ConfigError("expected true or false, got '" + v + "'");
        case Kind::seeds: {
            std::vector<std::uint64_t> out;
            std::stringstream ss(v);
            std::string piece;
            while (std::getline(ss, piece, ',')) out.push_back(parse_count(trim(piece)));
            return out;
        }
    }
    return {};
}

std::string value_text(const Field& f, const json& v) {
    switch (f.kind) {
        case Kind::text: return v.get<std::string>();
        case Kind::seeds: {
            std::string s;
            for (const auto& x : v) s += (s.empty() ? "" : ",") + std::to_string(x.get<std::uint64_t>());
            return s;
        }
        case Kind::real: {
            std::ostringstream os;
            os << std::setprecision(17) << v.get<double>();
            return os.str();
        }
        default: return v.dump();
    }
}

}  // namespace

nlohmann::json spec_to_json(const ExperimentSpec& spec) {
    json j = json::object();
    for (const auto& f : fields()) j[f.key] = f.get(spec);
    return j;
}

ExperimentSpec spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("spec snapshot is not an object");
    ExperimentSpec s;
    for (const auto& [key, value] : j.items()) {
        const Field* f = find_field(key);
        if (!f) throw ConfigError("unknown spec field '" + key + "'");
        try {
            f->set(s, value);
        } catch (const json::exception& e) {
            throw ParseError("spec field '" + key + "': " + e.what());
        }
    }
    return s;
}

bool ExperimentSpec::operator==(const ExperimentSpec& other) const {
    return spec_to_json(*this) == spec_to_json(other);
}

ExperimentSpec parse_spec_text(const std::string& text) {
    std::vector<std::tuple<std::size_t, std::string, std::string>> pairs;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    for (; std::getline(in, line);) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        if (!find_field(key)) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        pairs.emplace_back(lineno, key, value);
    }
    if (pairs.empty()) throw ConfigError("config is empty");

    ExperimentSpec spec;
    for (const auto& [ln, key, value] : pairs)
        if (key == "name")
            for (const auto& r : registry())
                if (r.name == value) spec = r;
    for (const auto& [ln, key, value] : pairs)
        if (key == "scale") spec = apply_scale(spec, parse_scale(value));
    for (const auto& [ln, key, value] : pairs) {
        try {
            find_field(key)->set(spec, text_value(*find_field(key), value));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(ln) + ": " + key + ": " + e.what());
        }
    }
    spec.validate();
    return spec;
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_spec_text(buf.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string spec_to_text(const ExperimentSpec& spec) {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + " = " + value_text(f, f.get(spec)) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// running

double ExperimentResult::mean_precision() const {
    if (seeds.empty()) return 0;
    double s = 0;
    for (const auto& r : seeds) s += r.routing_precision;
    return s / double(seeds.size());
}

double ExperimentResult::mean_accuracy() const {
    if (seeds.empty()) return 0;
    double s = 0;
    for (const auto& r : seeds) s += r.task_accuracy;
    return s / double(seeds.size());
}

std::filesystem::path default_results_dir() {
    if (const char* env = std::getenv("FCI_RESULTS_DIR"); env && *env) return env;
    return "results";
}

CorpusScore score_bm25(const tasks::SegmentedCorpus& corpus, std::size_t top_m) {
    if (corpus.items.empty()) throw ContractError("score_bm25: empty corpus");
    CorpusScore sc;
    for (const auto& item : corpus.items) {
        auto index = alt::bm25_build(item.segments);
        auto ranked = alt::bm25_retrieve(index, item.query, std::min(top_m, item.segments.size()));
        std::size_t hits = 0;
        for (const auto& [seg, score] : ranked)
            hits += std::binary_search(item.gold.begin(), item.gold.end(), seg);
        sc.segment_precision += double(hits) / double(ranked.size());
        sc.hit_rate += hits > 0;
    }
    sc.segment_precision /= double(corpus.items.size());
    sc.hit_rate /= double(corpus.items.size());
    return sc;
}

CorpusScore score_random_retrieval(const tasks::SegmentedCorpus& corpus, std::uint64_t seed, std::size_t top_m) {
    if (corpus.items.empty()) throw ContractError("score_random_retrieval: empty corpus");
    CorpusScore sc;
    for (std::size_t i = 0; i < corpus.items.size(); ++i) {
        const auto& item = corpus.items[i];
        Rng rng(derive_seed(seed, i));
        std::vector<std::size_t> ids(item.segments.size());
        std::iota(ids.begin(), ids.end(), 0);
        const std::size_t m = std::min(top_m, ids.size());
        for (std::size_t t = 0; t < m; ++t) {
            std::uniform_int_distribution<std::size_t> pick(t, ids.size() - 1);
            std::swap(ids[t], ids[pick(rng)]);
        }
        std::size_t hits = 0;
        for (std::size_t t = 0; t < m; ++t) hits += std::binary_search(item.gold.begin(), item.gold.end(), ids[t]);
        sc.segment_precision += double(hits) / double(m);
        sc.hit_rate += hits > 0;
    }
    sc.segment_precision /= double(corpus.items.size());
    sc.hit_rate /= double(corpus.items.size());
    return sc;
}

namespace {

model::Preprocess model_preprocess(Preprocessing p, std::size_t layers) {
    switch (p) {
        case Preprocessing::none:
        case Preprocessing::raw_embed: return model::Preprocess::raw;
        case Preprocessing::content_embed: return model::Preprocess::content;
        case Preprocessing::transformer: return layers == 0 ? model::Preprocess::raw : model::Preprocess::transformer;
        case Preprocessing::flow: return model::Preprocess::flow;
        case Preprocessing::flow_bidir: return model::Preprocess::flow_bidir;
        case Preprocessing::linear_attn: return model::Preprocess::linear_attn;
    }
    return model::Preprocess::raw;
}

model::RouterKind model_router(RouterChoice r) {
    if (is_external(r)) return model::RouterKind::external;
    if (r == RouterChoice::segment_mean) return model::RouterKind::segment_mean;
    if (r == RouterChoice::segment_max) return model::RouterKind::segment_max;
    return model::RouterKind::investigator;
}

tasks::SequenceBatch make_split(const ExperimentSpec& spec, std::size_t n, std::uint64_t seed) {
    if (spec.task == tasks::TaskKind::mqar) return tasks::gen_mqar(n, spec.mqar, seed);
    return tasks::gen_distant_evidence(n, spec.distant, seed);
}

}  // namespace

std::unique_ptr<model::SelectionSource> make_selection_source(const ExperimentSpec& spec, const model::FciModel& m,
                                                              std::uint64_t seed) {
    const auto& rc = m.config().routing;
    model::BanditConfig bc;
    switch (spec.router) {
        case RouterChoice::oracle: return model::make_oracle_source(rc);
        case RouterChoice::random: return model::make_random_source(rc, derive_seed(seed, 8));
        case RouterChoice::bloom: return model::make_bloom_source(rc, 16);
        case RouterChoice::linucb: bc.kind = model::BanditKind::linucb; break;
        case RouterChoice::thompson: bc.kind = model::BanditKind::thompson; break;
        case RouterChoice::oful: bc.kind = model::BanditKind::oful; break;
        default: return nullptr;
    }
    return model::make_bandit_source(rc, bc, m.token_table(), m.position_table(), derive_seed(seed, 7));
}

model::ModelConfig model_config_for(const ExperimentSpec& spec) {
    model::ModelConfig mc;
    mc.d_model = spec.d_model;
    mc.heads = spec.heads;
    mc.max_len = spec.sequence_length();
    mc.preprocess = model_preprocess(spec.preprocessing, spec.layers);
    mc.layers = (mc.preprocess == model::Preprocess::raw || mc.preprocess == model::Preprocess::content) ? 0 : spec.layers;
    mc.router = model_router(spec.router);
    mc.routing.k = spec.k;
    return mc;
}

namespace {

double cosine_gap_of(const model::FciModel& m, const tasks::SequenceBatch& data, std::uint64_t seed) {
    std::vector<Tensor<float>> reps;
    std::vector<std::size_t> q, a;
    for (const auto& s : data.samples) {
        Graph<float> g(false);
        reps.push_back(m.encode(g, s.tokens));
        q.push_back(s.query_pos);
        a.push_back(s.key_pos);
    }
    Rng rng(derive_seed(seed, 6));
    return analysis::cosine_gap(reps, q, a, rng).gap;
}

SeedResult run_corpus_seed(const ExperimentSpec& spec, std::uint64_t seed) {
    tasks::SyntheticCorpusConfig cc;
    cc.items = spec.corpus_items;
    const auto corpus = tasks::gen_synthetic_corpus(cc, derive_seed(seed, 11));
    const auto sc = spec.router == RouterChoice::bm25 ? score_bm25(corpus)
                                                      : score_random_retrieval(corpus, derive_seed(seed, 12));
    SeedResult r;
    r.seed = seed;
    r.routing_precision = r.expanded_precision = sc.segment_precision;
    r.hit_rate = sc.hit_rate;
    return r;
}

SeedResult run_sequence_seed(const ExperimentSpec& spec, std::uint64_t seed, const RunOptions& opt,
                             const std::filesystem::path& ckpt_dir) {
    SeedResult r;
    r.seed = seed;
    const auto train_set = make_split(spec, spec.train.n_train, derive_seed(seed, 1));
    const auto eval_set = make_split(spec, spec.train.n_eval, derive_seed(seed, 2));

    const auto mc = model_config_for(spec);
    model::FciModel m(mc, derive_seed(seed, 3));
    auto source = make_selection_source(spec, m, seed);

    r.initial_precision = training::evaluate(m, eval_set, source.get()).routing_precision;

    if (is_contrastive(spec.router)) {
        alt::ContrastiveConfig cc;
        cc.finetune = spec.router == RouterChoice::contrastive_finetune;
        cc.seed = derive_seed(seed, 5);
        std::vector<alt::ContrastivePair> pairs;
        for (const auto& s : train_set.samples) pairs.push_back({s.query_pos, s.key_pos});
        alt::RepsSource reps = [&](Graph<float>& g, std::size_t i) { return m.encode(g, train_set.samples[i].tokens); };
        auto encoder = m.encoder_params();
        auto pre = alt::contrastive_pretrain(reps, pairs, m.investigator(), cc, cc.finetune ? &encoder : nullptr);
        r.contrastive_loss = pre.epoch_loss;
        // the second stage trains the Council alone on top of the pretrained router
        m.replace_investigator(std::move(pre.params), false);
        m.set_encoder_trainable(false);
    }

    auto on_epoch = [&](const training::EpochRecord& rec) {
        if (opt.on_epoch) opt.on_epoch(seed, rec);
    };
    auto tc = spec.train;
    tc.seed = derive_seed(seed, 10);
    auto tr = training::train(m, train_set, eval_set, tc, source.get(), on_epoch);
    r.history = tr.history;
    r.aborted = tr.aborted;
    r.abort_reason = tr.abort_reason;

    if (!r.history.empty()) {
        r.routing_precision = r.history.back().routing_precision;
        r.expanded_precision = r.history.back().expanded_precision;
        r.task_accuracy = r.history.back().task_accuracy;
        std::vector<double> p;
        for (const auto& h : r.history) p.push_back(h.routing_precision);
        r.phase_epoch = analysis::detect_phase_transition(p);
    } else {
        const auto ev = training::evaluate(m, eval_set, source.get());
        r.routing_precision = ev.routing_precision;
        r.expanded_precision = ev.expanded_precision;
        r.task_accuracy = ev.task_accuracy;
    }
    if (spec.preprocessing != Preprocessing::none) r.cosine_gap = cosine_gap_of(m, eval_set, seed);
    if (mc.router != model::RouterKind::external) {
        const auto sp = analysis::svd_energy_rank(m.investigator());
        r.spectrum = SpectrumSummary{sp.effective_rank, sp.threshold, sp.singular_values};
        const auto trained = m.investigator().clone();
        const bool trainable = !is_contrastive(spec.router);
        m.replace_investigator(router::randomize_projections(trained, derive_seed(seed, 9)), false);
        const auto ablated = training::evaluate(m, eval_set, source.get());
        r.random_projection_precision = ablated.routing_precision;
        if (spec.router == RouterChoice::investigator_random_proj) {
            r.routing_precision = ablated.routing_precision;
            r.expanded_precision = ablated.expanded_precision;
            r.task_accuracy = ablated.task_accuracy;
        } else {
            m.replace_investigator(trained, trainable);
        }
    }
    if (opt.save_checkpoints && !ckpt_dir.empty()) {
        std::filesystem::create_directories(ckpt_dir);
        m.params().save(ckpt_dir / (spec.name + "-seed" + std::to_string(seed) + ".ckpt"));
    }
    return r;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y%m%dT%H%M%S") << '.' << std::setw(3) << std::setfill('0') << ms << 'Z';
    return os.str();
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec, const RunOptions& options) {
    spec.validate();
    const auto start = std::chrono::steady_clock::now();
    ExperimentResult result;
    result.spec = spec;
    result.version = version_string();
    result.timestamp = utc_timestamp();
    const auto dir = options.results_dir.empty() ? default_results_dir() : options.results_dir;
    for (auto seed : spec.seeds) {
        if (options.log) options.log(spec.name + ": seed " + std::to_string(seed));
        result.seeds.push_back(spec.task == tasks::TaskKind::corpus
                                   ? run_corpus_seed(spec, seed)
                                   : run_sequence_seed(spec, seed, options, dir / spec.name));
    }
    result.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (options.persist) {
        const auto path = write_result(result, dir);
        if (options.log) options.log("wrote " + path.string());
    }
    return result;
}

// ---------------------------------------------------------------------------
// result files

namespace {

json record_to_json(const training::EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"routing_precision", r.routing_precision},
            {"expanded_precision", r.expanded_precision},
            {"task_accuracy", r.task_accuracy},
            {"total_loss", r.total_loss},
            {"routing_loss", r.routing_loss},
            {"task_loss", r.task_loss},
            {"learning_rate", r.learning_rate},
            {"route_weight", r.route_weight}};
}

training::EpochRecord record_from_json(const json& j) {
    training::EpochRecord r;
    r.epoch = j.at("epoch").get<std::size_t>();
    r.routing_precision = j.at("routing_precision").get<double>();
    r.expanded_precision = j.at("expanded_precision").get<double>();
    r.task_accuracy = j.at("task_accuracy").get<double>();
    r.total_loss = j.at("total_loss").get<double>();
    r.routing_loss = j.at("routing_loss").get<double>();
    r.task_loss = j.at("task_loss").get<double>();
    r.learning_rate = j.at("learning_rate").get<double>();
    r.route_weight = j.at("route_weight").get<double>();
    return r;
}

template <typename T>
json opt_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> opt_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

}  // namespace

nlohmann::json result_to_json(const ExperimentResult& result, bool include_timing) {
    json seeds = json::array();
    for (const auto& s : result.seeds) {
        json h = json::array();
        for (const auto& rec : s.history) h.push_back(record_to_json(rec));
        json spectrum = nullptr;
        if (s.spectrum)
            spectrum = {{"effective_rank", s.spectrum->effective_rank},
                        {"threshold", s.spectrum->threshold},
                        {"singular_values", s.spectrum->singular_values}};
        seeds.push_back({{"seed", s.seed},
                         {"aborted", s.aborted},
                         {"abort_reason", s.abort_reason},
                         {"history", h},
                         {"routing_precision", s.routing_precision},
                         {"expanded_precision", s.expanded_precision},
                         {"task_accuracy", s.task_accuracy},
                         {"phase_epoch", opt_json(s.phase_epoch)},
                         {"cosine_gap", opt_json(s.cosine_gap)},
                         {"spectrum", spectrum},
                         {"random_projection_precision", opt_json(s.random_projection_precision)},
                         {"initial_precision", opt_json(s.initial_precision)},
                         {"hit_rate", opt_json(s.hit_rate)},
                         {"contrastive_loss", s.contrastive_loss}});
    }
    json j = {{"schema", 1},
              {"version", result.version},
              {"name", result.spec.name},
              {"scale", to_string(result.spec.scale)},
              {"spec", spec_to_json(result.spec)},
              {"seeds", seeds},
              {"summary", {{"routing_precision", result.mean_precision()}, {"task_accuracy", result.mean_accuracy()}}},
              {"estimators",
               {{"routing_precision", "gold key position in the top-k set, before neighbour expansion"},
                {"cosine_gap", "cos(r_q, r_a) minus mean cos(r_q, r_j) over up to 16 positions j drawn without "
                               "replacement from those other than q and a, averaged over held-out sequences"},
                {"effective_rank", "fewest singular values of sum_h Wq_h Wk_h^T holding 0.9 of the squared energy"}}}};
    if (include_timing)
        j["timing"] = {{"timestamp", result.timestamp}, {"wall_clock_seconds", result.wall_clock_seconds}};
    return j;
}

ExperimentResult result_from_json(const nlohmann::json& j) {
    try {
        if (j.at("schema").get<int>() != 1) throw VersionError("unsupported result schema " + j.at("schema").dump());
        ExperimentResult r;
        r.spec = spec_from_json(j.at("spec"));
        r.version = j.at("version").get<std::string>();
        if (j.contains("timing")) {
            r.timestamp = j.at("timing").at("timestamp").get<std::string>();
            r.wall_clock_seconds = j.at("timing").at("wall_clock_seconds").get<double>();
        }
        for (const auto& s : j.at("seeds")) {
            SeedResult sr;
            sr.seed = s.at("seed").get<std::uint64_t>();
            sr.aborted = s.at("aborted").get<bool>();
            sr.abort_reason = s.at("abort_reason").get<std::string>();
            for (const auto& h : s.at("history")) sr.history.push_back(record_from_json(h));
            sr.routing_precision = s.at("routing_precision").get<double>();
            sr.expanded_precision = s.at("expanded_precision").get<double>();
            sr.task_accuracy = s.at("task_accuracy").get<double>();
            sr.phase_epoch = opt_from<std::size_t>(s, "phase_epoch");
            sr.cosine_gap = opt_from<double>(s, "cosine_gap");
            if (s.contains("spectrum") && !s.at("spectrum").is_null()) {
                const auto& sp = s.at("spectrum");
                sr.spectrum = SpectrumSummary{sp.at("effective_rank").get<std::size_t>(),
                                              sp.at("threshold").get<double>(),
                                              sp.at("singular_values").get<std::vector<double>>()};
            }
            sr.random_projection_precision = opt_from<double>(s, "random_projection_precision");
            sr.initial_precision = opt_from<double>(s, "initial_precision");
            sr.hit_rate = opt_from<double>(s, "hit_rate");
            sr.contrastive_loss = s.value("contrastive_loss", std::vector<double>{});
            r.seeds.push_back(std::move(sr));
        }
        return r;
    } catch (const json::exception& e) {
        throw ParseError(std::string("result file: ") + e.what());
    }
}

std::filesystem::path write_result(const ExperimentResult& result, const std::filesystem::path& dir) {
    const auto sub = dir / result.spec.name;
    std::filesystem::create_directories(sub);
    const std::string stem = result.spec.name + "-" + to_string(result.spec.scale) + "-" + result.timestamp;
    auto path = sub / (stem + ".json");
    for (int n = 1; std::filesystem::exists(path); ++n) path = sub / (stem + "-" + std::to_string(n) + ".json");
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write result file " + path.string());
    out << result_to_json(result).dump(2) << "\n";
    return path;
}

Landscape aggregate_landscape(const std::filesystem::path& dir) {
    Landscape land;
    if (!std::filesystem::is_directory(dir)) throw ConfigError("results directory " + dir.string() + " does not exist");
    std::map<std::pair<std::string, std::string>, std::pair<std::string, ExperimentResult>> newest;
    std::size_t files = 0;
    std::vector<std::filesystem::path> paths;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json" &&
            entry.path().filename().string().rfind("landscape", 0) != 0)
            paths.push_back(entry.path());
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
        ++files;
        try {
            std::ifstream in(p);
            const auto j = json::parse(in);
            auto r = result_from_json(j);
            const auto key = std::make_pair(r.spec.name, to_string(r.spec.scale));
            auto it = newest.find(key);
            if (it == newest.end() || it->second.first < r.timestamp) newest[key] = {r.timestamp, std::move(r)};
        } catch (const std::exception& e) {
            ++land.skipped_files;
            land.warnings.push_back(p.string() + ": " + e.what());
        }
    }
    if (files == 0) throw ConfigError("no result files under " + dir.string());
    for (const auto& [key, entry] : newest) {
        const auto& r = entry.second;
        LandscapeRow row;
        row.name = key.first;
        row.scale = key.second;
        row.seeds = r.seeds.size();
        if (r.seeds.empty()) continue;
        row.precision_min = row.accuracy_min = 1e300;
        row.precision_max = row.accuracy_max = -1e300;
        for (const auto& s : r.seeds) {
            row.precision_mean += s.routing_precision / double(r.seeds.size());
            row.accuracy_mean += s.task_accuracy / double(r.seeds.size());
            row.precision_min = std::min(row.precision_min, s.routing_precision);
            row.precision_max = std::max(row.precision_max, s.routing_precision);
            row.accuracy_min = std::min(row.accuracy_min, s.task_accuracy);
            row.accuracy_max = std::max(row.accuracy_max, s.task_accuracy);
        }
        land.rows.push_back(row);
    }
    std::stable_sort(land.rows.begin(), land.rows.end(), [](const LandscapeRow& a, const LandscapeRow& b) {
        if (a.precision_mean != b.precision_mean) return a.precision_mean > b.precision_mean;
        return a.name < b.name;
    });
    return land;
}

std::string landscape_csv(const Landscape& l) {
    std::ostringstream os;
    os << "name,scale,seeds,precision_mean,precision_min,precision_max,accuracy_mean,accuracy_min,accuracy_max\n";
    os << std::setprecision(6);
    for (const auto& r : l.rows)
        os << r.name << ',' << r.scale << ',' << r.seeds << ',' << r.precision_mean << ',' << r.precision_min << ','
           << r.precision_max << ',' << r.accuracy_mean << ',' << r.accuracy_min << ',' << r.accuracy_max << '\n';
    return os.str();
}

nlohmann::json landscape_json(const Landscape& l) {
    json rows = json::array();
    for (const auto& r : l.rows)
        rows.push_back({{"name", r.name},
                        {"scale", r.scale},
                        {"seeds", r.seeds},
                        {"precision", {{"mean", r.precision_mean}, {"min", r.precision_min}, {"max", r.precision_max}}},
                        {"accuracy", {{"mean", r.accuracy_mean}, {"min", r.accuracy_min}, {"max", r.accuracy_max}}}});
    return {{"schema", 1}, {"rows", rows}, {"skipped_files", l.skipped_files}, {"warnings", l.warnings}};
}

}  // namespace fci::experiments
