#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fci::tasks {

/// Synthetic tokens live in [1, kVocabEnd); 0 is never emitted.
constexpr std::uint16_t kVocabEnd = 256;
/// Values are the first 64 tokens, 1..64.
constexpr std::size_t kValueVocab = 64;

constexpr std::uint16_t value_token(std::size_t index) { return static_cast<std::uint16_t>(index + 1); }
std::optional<std::size_t> value_index(std::uint16_t token);

enum class TaskKind { distant, mqar, corpus };

std::string to_string(TaskKind kind);
TaskKind parse_task(const std::string& name);

struct Sample {
    std::vector<std::uint16_t> tokens;
    std::size_t query_pos = 0;
    std::size_t key_pos = 0;  // gold evidence position; its value sits at key_pos + 1
    std::uint16_t value = 0;
    std::vector<std::size_t> distractors;  // distractor key positions

    std::uint16_t query_token() const { return tokens[query_pos]; }
    std::size_t value_pos() const { return key_pos + 1; }
    bool operator==(const Sample&) const = default;
};

struct SequenceBatch {
    TaskKind kind = TaskKind::distant;
    std::size_t length = 0;
    std::uint64_t seed = 0;
    std::vector<Sample> samples;

    std::size_t size() const noexcept { return samples.size(); }
    bool operator==(const SequenceBatch&) const = default;
};

struct DistantConfig {
    std::size_t length = 512;
    std::size_t min_dist = 200;
    std::size_t n_distractors = 4;
    std::size_t window = 50;
    /// Sanity mode: the evidence sits within `near_max_dist` of the query.
    bool near = false;
    std::size_t near_max_dist = 16;

    void validate() const;
};

/// Query key at q; the same key at a far position a with its value at a + 1;
/// distractor pairs near q with different keys; filler uniform over the
/// vocabulary minus the query key. Sample i uses derive_seed(seed, i).
SequenceBatch gen_distant_evidence(std::size_t n, const DistantConfig& cfg, std::uint64_t seed);

/// Throws ValidationError naming the first violated invariant.
void validate_distant(const Sample& s, const DistantConfig& cfg);

struct MqarConfig {
    std::size_t n_pairs = 16;
    std::size_t length = 256;

    void validate() const;
};

/// n_pairs distinct keys with their values at positions [0, 2 n_pairs), filler
/// without any key, one of the keys as the final token.
SequenceBatch gen_mqar(std::size_t n, const MqarConfig& cfg, std::uint64_t seed);

void validate_mqar(const Sample& s, const MqarConfig& cfg);

}  // namespace fci::tasks
