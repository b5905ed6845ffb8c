#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tokleak/gguf.hpp"
#include "tokleak/rng.hpp"

namespace tokleak::planner {

struct FrequencyTable {
    std::vector<std::pair<uint32_t, uint64_t>> ranked; // (token_id, count), count desc
    uint64_t corpus_size = 0;
};

// Longest-prefix-match tokenizer over the vocab. A stand-in for the model's
// real BPE: deterministic, lossless, and close enough for coverage planning.
// Fails on any character the vocab cannot represent.
std::vector<uint32_t> greedy_tokenize(const gguf::VocabTable& vocab,
                                      std::string_view text);

// Top-n tokens by count; ties break toward the lower token id.
FrequencyTable build_frequency_set(std::span<const uint32_t> corpus, size_t n);

// Raw-text path: lower-cases, strips punctuation, tokenizes word by word.
FrequencyTable build_frequency_set_text(const gguf::VocabTable& vocab,
                                        std::string_view text, size_t n);

std::vector<uint32_t> normalize_and_tokenize(const gguf::VocabTable& vocab,
                                             std::string_view text);

struct CoveragePoint {
    uint64_t set_size;
    double mean_coverage;      // mean fraction of a key's tokens inside the set
    double full_capture_prob;  // probability every token is inside
};

struct CoverageCurve {
    std::vector<CoveragePoint> points;
    uint64_t trials = 0;
    uint64_t seed = 0;
};

// Token ids ranked by frequency over `trials` random keys, most frequent
// first: the candidate pool for key-capture monitor sets.
std::vector<uint32_t> key_token_ranking(const gguf::VocabTable& vocab,
                                        uint64_t trials,
                                        uint64_t seed,
                                        std::string_view key_template);

// Monitor-set file consumable by `monitor --tokens @file` and by explicit
// simulator sets: comma-separated token ids, one line.
std::string format_id_set(std::span<const uint32_t> ids);

// RFC 4122 v4: 32 hex chars + 4 hyphens, version/variant bits fixed. The
// template notation uses 'x' for a random nibble and 'y' for the variant
// nibble (8, 9, a or b).
inline constexpr std::string_view kUuidV4Template =
    "xxxxxxxx-xxxx-4xxx-yxxx-xxxxxxxxxxxx";

std::string random_key(CounterRng& rng, std::string_view key_template = kUuidV4Template);

// Phase 1 ranks tokens by frequency over `trials` random keys; phase 2
// scores fresh keys against the nested top-N sets, so both curve metrics are
// non-decreasing in N by construction.
CoverageCurve uuid_coverage(const gguf::VocabTable& vocab,
                            std::span<const uint64_t> set_sizes,
                            uint64_t trials,
                            uint64_t seed,
                            std::string_view key_template = kUuidV4Template);

struct RotationPlan {
    std::vector<std::vector<uint32_t>> rounds; // monitor sets of the first sampled key
    double interactions_50 = 0.0;  // mean interactions to capture 50% of a key's tokens
    double interactions_80 = 0.0;
    double interactions_100 = 0.0;
    bool budget_exhausted = false; // some trial hit max_interactions
    uint64_t trials = 0;
};

// Monte-Carlo model of the multi-exposure rotation attack: each interaction
// monitors set_size not-yet-tried tokens from the frequency ranking (top of
// the ranking first), captures the key tokens it sees with probability
// detection_prob each, and never re-monitors a tried token. Captured tokens
// accumulate until 50/80/100% of the key's distinct tokens are recovered.
RotationPlan plan_rotation(const gguf::VocabTable& vocab,
                           size_t set_size,
                           uint64_t trials,
                           uint64_t seed,
                           double detection_prob = 1.0,
                           uint64_t max_interactions = 1000,
                           std::string_view key_template = kUuidV4Template);

// Pure coverage: fraction of response tokens inside the table's top set.
// Detection loss composes separately via the simulator.
double expected_single_shot_leak(const FrequencyTable& table,
                                 size_t set_size,
                                 std::span<const uint32_t> response);

// Deterministic synthetic vocabulary for key-coverage experiments without a
// real model file: hyphen, the 16 hex characters, and 64 hex pairs.
gguf::VocabTable make_uuid_fixture_vocab(uint64_t seed = 0xF17u);

gguf::VocabTable load_vocab_json(const std::string& path);
void save_vocab_json(const gguf::VocabTable& vocab, const std::string& path);

} // namespace tokleak::planner
