#include "fci/tasks.hpp"

#include <algorithm>
#include <cmath>

#include "fci/errors.hpp"
#include "fci/params.hpp"

namespace fci::tasks {

std::optional<std::size_t> value_index(std::uint16_t token) {
    if (token >= 1 && token <= kValueVocab) return static_cast<std::size_t>(token - 1);
    return std::nullopt;
}

std::string to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::distant: return "distant";
        case TaskKind::mqar: return "mqar";
        case TaskKind::corpus: return "corpus";
    }
    return "?";
}

TaskKind parse_task(const std::string& name) {
    if (name == "distant") return TaskKind::distant;
    if (name == "mqar") return TaskKind::mqar;
    if (name == "corpus") return TaskKind::corpus;
    throw ConfigError("unknown task '" + name + "' (expected distant, mqar or corpus)");
}

void DistantConfig::validate() const {
    if (length < 4) throw ConfigError("DistantConfig: length must be >= 4");
    if (!near && length < min_dist + 3) {
        throw ConfigError("DistantConfig: length " + std::to_string(length) + " leaves no room for distance " +
                          std::to_string(min_dist));
    }
    if (near && near_max_dist < 2) throw ConfigError("DistantConfig: near_max_dist must be >= 2");
}

namespace {

std::uint16_t draw_token(Rng& rng, std::uint16_t avoid) {
    std::uniform_int_distribution<int> pick(1, kVocabEnd - 2);
    int t = pick(rng);
    if (t >= avoid) ++t;  // uniform over [1, 256) without `avoid`
    return static_cast<std::uint16_t>(t);
}

/// Uniform over the value vocabulary minus the tokens flagged in `taken`.
std::uint16_t draw_value(Rng& rng, const std::vector<char>& taken) {
    std::vector<std::uint16_t> free;
    for (std::size_t i = 0; i < kValueVocab; ++i)
        if (!taken[value_token(i)]) free.push_back(value_token(i));
    std::uniform_int_distribution<std::size_t> pick(0, free.size() - 1);
    return free[pick(rng)];
}

std::size_t gap(std::size_t a, std::size_t b) { return a > b ? a - b : b - a; }

Sample make_distant(const DistantConfig& cfg, Rng& rng) {
    const std::size_t len = cfg.length;
    Sample s;
    s.tokens.assign(len, 0);
    std::uniform_int_distribution<int> key_pick(1, kVocabEnd - 1);
    const auto key = static_cast<std::uint16_t>(key_pick(rng));
    std::vector<char> is_key(kVocabEnd, 0);
    is_key[key] = 1;

    // (q, a) with a + 1 < len and the distance constraint
    std::uniform_int_distribution<std::size_t> pos_pick(0, len - 1);
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        const std::size_t q = pos_pick(rng);
        std::vector<std::size_t> options;
        for (std::size_t a = 0; a + 1 < len; ++a) {
            if (a == q || a + 1 == q) continue;
            const std::size_t dist = gap(a, q);
            if (cfg.near ? (dist >= 2 && dist <= cfg.near_max_dist) : dist >= cfg.min_dist) options.push_back(a);
        }
        if (options.empty()) continue;
        std::uniform_int_distribution<std::size_t> opt_pick(0, options.size() - 1);
        s.query_pos = q;
        s.key_pos = options[opt_pick(rng)];
        placed = true;
    }
    if (!placed) throw ConfigError("gen_distant_evidence: cannot place query and evidence");

    std::vector<char> used(len, 0);
    used[s.query_pos] = used[s.key_pos] = used[s.key_pos + 1] = 1;
    for (std::size_t d = 0; d < cfg.n_distractors; ++d) {
        const std::size_t lo = s.query_pos > cfg.window ? s.query_pos - cfg.window : 0;
        const std::size_t hi = std::min(len - 2, s.query_pos + cfg.window);
        std::uniform_int_distribution<std::size_t> near_pick(lo, hi);
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            const std::size_t p = near_pick(rng);
            if (used[p] || used[p + 1]) continue;
            used[p] = used[p + 1] = 1;
            s.distractors.push_back(p);
            s.tokens[p] = draw_token(rng, key);
            s.tokens[p + 1] = draw_value(rng, is_key);
            ok = true;
        }
        if (!ok) throw ConfigError("gen_distant_evidence: no room for distractors around the query");
    }
    std::sort(s.distractors.begin(), s.distractors.end());
    s.value = draw_value(rng, is_key);
    s.tokens[s.query_pos] = key;
    s.tokens[s.key_pos] = key;
    s.tokens[s.key_pos + 1] = s.value;
    for (std::size_t p = 0; p < len; ++p)
        if (s.tokens[p] == 0) s.tokens[p] = draw_token(rng, key);
    return s;
}

}  // namespace

SequenceBatch gen_distant_evidence(std::size_t n, const DistantConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SequenceBatch batch{TaskKind::distant, cfg.length, seed, {}};
    batch.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, i));
        batch.samples.push_back(make_distant(cfg, rng));
    }
    return batch;
}

void validate_distant(const Sample& s, const DistantConfig& cfg) {
    const std::size_t len = s.tokens.size();
    auto fail = [](const std::string& why) { throw ValidationError("distant sample: " + why); };
    if (len != cfg.length) fail("length " + std::to_string(len));
    if (s.query_pos >= len || s.key_pos + 1 >= len) fail("positions out of range");
    if (s.query_pos == s.key_pos) fail("query and key coincide");
    for (auto t : s.tokens)
        if (t < 1 || t >= kVocabEnd) fail("token " + std::to_string(t) + " outside [1, 256)");
    const auto key = s.tokens[s.query_pos];
    if (s.tokens[s.key_pos] != key) fail("gold key differs from query key");
    if (s.tokens[s.key_pos + 1] != s.value) fail("value not adjacent to key");
    if (!value_index(s.value)) fail("value outside the value vocabulary");
    const std::size_t dist = gap(s.key_pos, s.query_pos);
    if (cfg.near ? dist > cfg.near_max_dist : dist < cfg.min_dist) fail("distance " + std::to_string(dist));
    for (std::size_t p = 0; p < len; ++p)
        if (p != s.query_pos && p != s.key_pos && s.tokens[p] == key) fail("query key repeated at " + std::to_string(p));
    if (s.distractors.size() != cfg.n_distractors) fail("distractor count");
    for (auto p : s.distractors) {
        if (p + 1 >= len) fail("distractor out of range");
        if (s.tokens[p] == key) fail("distractor key equals query key");
        if (gap(p, s.query_pos) > cfg.window) fail("distractor outside window");
        if (!value_index(s.tokens[p + 1])) fail("distractor value outside the value vocabulary");
    }
}

void MqarConfig::validate() const {
    if (n_pairs == 0) throw ConfigError("MqarConfig: need at least one pair");
    if (2 * n_pairs + 1 > length) throw ConfigError("MqarConfig: 2 * n_pairs + 1 exceeds length");
    if (n_pairs >= kValueVocab) throw ConfigError("MqarConfig: keys could exhaust the value vocabulary");
}

SequenceBatch gen_mqar(std::size_t n, const MqarConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SequenceBatch batch{TaskKind::mqar, cfg.length, seed, {}};
    batch.samples.reserve(n);
    std::uniform_int_distribution<int> key_pick(1, kVocabEnd - 1);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, i));
        Sample s;
        s.tokens.assign(cfg.length, 0);
        std::vector<std::uint16_t> keys;
        std::vector<char> is_key(kVocabEnd, 0);
        for (std::size_t k = 0; k < cfg.n_pairs; ++k) {
            int retries = 0;
            auto key = static_cast<std::uint16_t>(key_pick(rng));
            while (is_key[key]) {
                if (++retries > 100) throw ConfigError("gen_mqar: could not draw distinct keys");
                key = static_cast<std::uint16_t>(key_pick(rng));
            }
            is_key[key] = 1;
            keys.push_back(key);
            s.tokens[2 * k] = key;
        }
        for (std::size_t k = 0; k < cfg.n_pairs; ++k) s.tokens[2 * k + 1] = draw_value(rng, is_key);
        std::uniform_int_distribution<int> filler(1, kVocabEnd - 1);
        for (std::size_t p = 2 * cfg.n_pairs; p + 1 < cfg.length; ++p) {
            auto t = static_cast<std::uint16_t>(filler(rng));
            while (is_key[t]) t = static_cast<std::uint16_t>(filler(rng));
            s.tokens[p] = t;
        }
        std::uniform_int_distribution<std::size_t> which(0, cfg.n_pairs - 1);
        const std::size_t j = which(rng);
        s.query_pos = cfg.length - 1;
        s.key_pos = 2 * j;
        s.tokens[s.query_pos] = keys[j];
        s.value = s.tokens[2 * j + 1];
        for (std::size_t k = 0; k < cfg.n_pairs; ++k)
            if (k != j) s.distractors.push_back(2 * k);
        batch.samples.push_back(std::move(s));
    }
    return batch;
}

void validate_mqar(const Sample& s, const MqarConfig& cfg) {
    auto fail = [](const std::string& why) { throw ValidationError("mqar sample: " + why); };
    if (s.tokens.size() != cfg.length) fail("length");
    std::vector<std::uint16_t> keys;
    for (std::size_t k = 0; k < cfg.n_pairs; ++k) keys.push_back(s.tokens[2 * k]);
    auto sorted = keys;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) fail("duplicate keys");
    if (s.query_pos != cfg.length - 1) fail("query not at the end");
    if (s.key_pos % 2 != 0 || s.key_pos >= 2 * cfg.n_pairs) fail("gold key not in the pair prefix");
    const auto q = s.tokens[s.query_pos];
    if (s.tokens[s.key_pos] != q) fail("gold key differs from query");
    if (s.tokens[s.key_pos + 1] != s.value) fail("value mismatch");
    if (std::count(s.tokens.begin(), s.tokens.end(), q) != 2) fail("query key does not appear exactly twice");
    for (std::size_t p = 2 * cfg.n_pairs; p + 1 < cfg.length; ++p)
        if (std::binary_search(sorted.begin(), sorted.end(), s.tokens[p])) fail("key token in filler");
    for (auto t : s.tokens)
        if (t < 1 || t >= kVocabEnd) fail("token out of range");
}

}  // namespace fci::tasks
