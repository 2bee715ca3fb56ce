#include "fci/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "fci/errors.hpp"
#include "fci/params.hpp"

namespace fci::tasks {

using nlohmann::json;

Terms tokenize(const std::string& text) {
    Terms out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

void SegmentedCorpus::validate() const {
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& it = items[i];
        if (it.segments.empty()) throw ValidationError("corpus item " + std::to_string(i) + " has no segments");
        for (auto g : it.gold)
            if (g >= it.segments.size())
                throw ValidationError("corpus item " + std::to_string(i) + ": gold id " + std::to_string(g) +
                                      " >= segment count " + std::to_string(it.segments.size()));
        if (!std::is_sorted(it.gold.begin(), it.gold.end()) ||
            std::adjacent_find(it.gold.begin(), it.gold.end()) != it.gold.end())
            throw ValidationError("corpus item " + std::to_string(i) + ": gold ids not strictly ascending");
    }
}

namespace {

/// A term list or a raw string; either way every piece is re-tokenized.
Terms terms_of(const json& j) {
    if (j.is_string()) return tokenize(j.get<std::string>());
    Terms out;
    for (const auto& t : j) {
        auto pieces = tokenize(t.get<std::string>());
        out.insert(out.end(), pieces.begin(), pieces.end());
    }
    return out;
}

}  // namespace

SegmentedCorpus parse_segmented_corpus(const std::string& text) {
    SegmentedCorpus corpus;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
        }
        CorpusItem item;
        try {
            if (!j.is_object()) throw ParseError("expected an object", lineno);
            item.id = j.value("id", std::to_string(corpus.items.size()));
            item.query = terms_of(j.at("query"));
            for (const auto& s : j.at("segments")) item.segments.push_back(terms_of(s));
            for (const auto& g : j.at("gold")) {
                const auto v = g.get<long long>();
                if (v < 0) throw ValidationError("negative gold id (line " + std::to_string(lineno) + ")");
                item.gold.push_back(static_cast<std::size_t>(v));
            }
        } catch (const json::exception& e) {
            throw ParseError(std::string("bad corpus record: ") + e.what(), lineno);
        }
        std::sort(item.gold.begin(), item.gold.end());
        item.gold.erase(std::unique(item.gold.begin(), item.gold.end()), item.gold.end());
        for (auto g : item.gold)
            if (g >= item.segments.size())
                throw ValidationError("gold id " + std::to_string(g) + " out of range for " +
                                      std::to_string(item.segments.size()) + " segments (line " +
                                      std::to_string(lineno) + ")");
        corpus.items.push_back(std::move(item));
    }
    if (corpus.items.empty()) throw ParseError("corpus file contains no items", lineno ? lineno : 1);
    corpus.validate();
    return corpus;
}

SegmentedCorpus load_segmented_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open corpus file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_segmented_corpus(buf.str());
}

std::string serialize_segmented_corpus(const SegmentedCorpus& corpus) {
    std::string out;
    for (const auto& it : corpus.items) {
        json j;
        j["id"] = it.id;
        j["query"] = it.query;
        j["segments"] = it.segments;
        j["gold"] = it.gold;
        out += j.dump();
        out.push_back('\n');
    }
    return out;
}

void save_segmented_corpus(const SegmentedCorpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write corpus file " + path.string());
    out << serialize_segmented_corpus(corpus);
}

void SyntheticCorpusConfig::validate() const {
    if (items == 0 || segments == 0) throw ConfigError("SyntheticCorpusConfig: empty corpus");
    if (gold == 0 || gold > segments) throw ConfigError("SyntheticCorpusConfig: gold count out of range");
    if (gold + hard_negatives > segments) throw ConfigError("SyntheticCorpusConfig: too many hard negatives");
    if (query_terms < 2) throw ConfigError("SyntheticCorpusConfig: need at least two query terms");
    if (segment_terms < query_terms) throw ConfigError("SyntheticCorpusConfig: segments shorter than queries");
}

namespace {

constexpr const char* kOnsets[] = {"b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
constexpr const char* kNuclei[] = {"a", "e", "i", "o", "u", "ai", "ou", "ea"};

std::string make_word(Rng& rng, std::size_t syllables) {
    std::uniform_int_distribution<std::size_t> on(0, std::size(kOnsets) - 1), nu(0, std::size(kNuclei) - 1);
    std::string w;
    for (std::size_t i = 0; i < syllables; ++i) {
        w += kOnsets[on(rng)];
        w += kNuclei[nu(rng)];
    }
    return w;
}

}  // namespace

SegmentedCorpus gen_synthetic_corpus(const SyntheticCorpusConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng lex_rng(derive_seed(seed, 0xC0));
    // Filler words are short and frequent; topic words are long and rare.
    std::vector<std::string> filler, topic;
    while (filler.size() < 300) {
        auto w = make_word(lex_rng, 2);
        if (std::find(filler.begin(), filler.end(), w) == filler.end()) filler.push_back(w);
    }
    while (topic.size() < 4000) {
        auto w = make_word(lex_rng, 4);
        if (std::find(topic.begin(), topic.end(), w) == topic.end()) topic.push_back(w);
    }

    SegmentedCorpus corpus;
    for (std::size_t i = 0; i < cfg.items; ++i) {
        Rng rng(derive_seed(seed, i + 1));
        std::uniform_int_distribution<std::size_t> fpick(0, filler.size() - 1), tpick(0, topic.size() - 1);
        CorpusItem item;
        item.id = "syn-" + std::to_string(i);
        std::vector<std::string> keys;
        while (keys.size() < cfg.query_terms) {
            auto w = topic[tpick(rng)];
            if (std::find(keys.begin(), keys.end(), w) == keys.end()) keys.push_back(w);
        }
        item.query = keys;
        item.query.insert(item.query.begin() + 1, filler[fpick(rng)]);

        std::vector<std::size_t> order(cfg.segments);
        for (std::size_t s = 0; s < cfg.segments; ++s) order[s] = s;
        std::shuffle(order.begin(), order.end(), rng);
        item.gold.assign(order.begin(), order.begin() + long(cfg.gold));
        std::sort(item.gold.begin(), item.gold.end());

        item.segments.assign(cfg.segments, {});
        for (std::size_t r = 0; r < cfg.segments; ++r) {
            const std::size_t s = order[r];
            Terms seg;
            if (r < cfg.gold) {
                auto shuffled = keys;
                std::shuffle(shuffled.begin(), shuffled.end(), rng);
                const std::size_t take = (cfg.query_terms + 1) / 2;
                seg.assign(shuffled.begin(), shuffled.begin() + long(take));
            } else if (r < cfg.gold + cfg.hard_negatives) {
                std::uniform_int_distribution<std::size_t> kpick(0, keys.size() - 1);
                seg.push_back(keys[kpick(rng)]);
            }
            while (seg.size() < cfg.segment_terms)
                seg.push_back(fpick(rng) % 5 == 0 ? topic[tpick(rng)] : filler[fpick(rng)]);
            std::shuffle(seg.begin(), seg.end(), rng);
            item.segments[s] = std::move(seg);
        }
        corpus.items.push_back(std::move(item));
    }
    corpus.validate();
    return corpus;
}

}  // namespace fci::tasks
