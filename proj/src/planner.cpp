#include "tokleak/planner.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "tokleak/errors.hpp"

namespace tokleak::planner {

namespace {

constexpr uint64_t kStreamRankingKeys = 10;
constexpr uint64_t kStreamScoringKeys = 11;
constexpr uint64_t kStreamDetection = 12;

// Byte-level trie for longest-prefix matching.
class VocabTrie {
public:
    explicit VocabTrie(const gguf::VocabTable& vocab) {
        nodes_.push_back({});
        for (uint32_t id = 0; id < vocab.tokens.size(); ++id) {
            insert(vocab.tokens[id], id);
        }
    }

    // Longest token that prefixes text[pos..]; returns (id, length) or length 0.
    std::pair<uint32_t, size_t> longest_match(std::string_view text, size_t pos) const {
        uint32_t node = 0;
        uint32_t best_id = 0;
        size_t best_len = 0;
        for (size_t i = pos; i < text.size(); ++i) {
            const auto it = nodes_[node].next.find(uint8_t(text[i]));
            if (it == nodes_[node].next.end()) break;
            node = it->second;
            if (nodes_[node].token_id >= 0) {
                best_id = uint32_t(nodes_[node].token_id);
                best_len = i - pos + 1;
            }
        }
        return {best_id, best_len};
    }

private:
    struct Node {
        std::unordered_map<uint8_t, uint32_t> next;
        int64_t token_id = -1;
    };

    void insert(std::string_view token, uint32_t id) {
        if (token.empty()) return;
        uint32_t node = 0;
        for (char c : token) {
            auto [it, fresh] = nodes_[node].next.emplace(uint8_t(c), uint32_t(nodes_.size()));
            if (fresh) nodes_.push_back({});
            node = it->second;
        }
        if (nodes_[node].token_id < 0) nodes_[node].token_id = id; // lowest id wins
    }

    std::vector<Node> nodes_;
};

std::vector<uint32_t> tokenize_with_trie(const VocabTrie& trie, std::string_view text) {
    std::vector<uint32_t> out;
    size_t pos = 0;
    while (pos < text.size()) {
        const auto [id, len] = trie.longest_match(text, pos);
        if (len == 0) {
            fail(errc::uncovered_character,
                 "no vocab token covers text at byte " + std::to_string(pos) +
                     " ('" + std::string(1, text[pos]) + "')");
        }
        out.push_back(id);
        pos += len;
    }
    return out;
}

} // namespace

std::vector<uint32_t> greedy_tokenize(const gguf::VocabTable& vocab,
                                      std::string_view text) {
    const VocabTrie trie(vocab);
    return tokenize_with_trie(trie, text);
}

FrequencyTable build_frequency_set(std::span<const uint32_t> corpus, size_t n) {
    if (corpus.empty()) fail(errc::empty_corpus, "corpus has no tokens");
    if (n == 0) fail(errc::invalid_argument, "need n >= 1");
    std::unordered_map<uint32_t, uint64_t> counts;
    for (uint32_t id : corpus) ++counts[id];

    std::vector<std::pair<uint32_t, uint64_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (ranked.size() > n) ranked.resize(n);

    FrequencyTable table;
    table.ranked = std::move(ranked);
    table.corpus_size = corpus.size();
    return table;
}

std::vector<uint32_t> normalize_and_tokenize(const gguf::VocabTable& vocab,
                                             std::string_view text) {
    const VocabTrie trie(vocab);
    std::vector<uint32_t> stream;
    std::string word;
    auto flush_word = [&] {
        if (!word.empty()) {
            const auto ids = tokenize_with_trie(trie, word);
            stream.insert(stream.end(), ids.begin(), ids.end());
            word.clear();
        }
    };
    for (char c : text) {
        const unsigned char u = (unsigned char)c;
        if (std::isalnum(u)) {
            word.push_back(char(std::tolower(u)));
        } else {
            flush_word(); // punctuation and whitespace split words and are dropped
        }
    }
    flush_word();
    return stream;
}

FrequencyTable build_frequency_set_text(const gguf::VocabTable& vocab,
                                        std::string_view text, size_t n) {
    const auto stream = normalize_and_tokenize(vocab, text);
    return build_frequency_set(stream, n);
}

std::string random_key(CounterRng& rng, std::string_view key_template) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(key_template.size());
    for (char c : key_template) {
        switch (c) {
            case 'x': out.push_back(kHex[rng.bounded(16)]); break;
            case 'y': out.push_back(kHex[8 + rng.bounded(4)]); break; // variant 10xx
            default:  out.push_back(c); break;
        }
    }
    return out;
}

namespace {

// Shared phase 1: rank tokens by frequency over `trials` random keys.
std::vector<uint32_t> rank_key_tokens(const VocabTrie& trie,
                                      uint64_t trials,
                                      uint64_t seed,
                                      std::string_view key_template) {
    std::map<uint32_t, uint64_t> counts; // ordered: deterministic iteration
    CounterRng rng(seed, kStreamRankingKeys);
    for (uint64_t i = 0; i < trials; ++i) {
        for (uint32_t id : tokenize_with_trie(trie, random_key(rng, key_template))) {
            ++counts[id];
        }
    }
    std::vector<std::pair<uint32_t, uint64_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<uint32_t> order;
    order.reserve(ranked.size());
    for (const auto& [id, count] : ranked) order.push_back(id);
    return order;
}

} // namespace

std::vector<uint32_t> key_token_ranking(const gguf::VocabTable& vocab,
                                        uint64_t trials,
                                        uint64_t seed,
                                        std::string_view key_template) {
    if (trials == 0) fail(errc::invalid_argument, "need at least one trial");
    const VocabTrie trie(vocab);
    return rank_key_tokens(trie, trials, seed, key_template);
}

std::string format_id_set(std::span<const uint32_t> ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out.push_back(',');
        out += std::to_string(ids[i]);
    }
    out.push_back('\n');
    return out;
}

CoverageCurve uuid_coverage(const gguf::VocabTable& vocab,
                            std::span<const uint64_t> set_sizes,
                            uint64_t trials,
                            uint64_t seed,
                            std::string_view key_template) {
    if (set_sizes.empty()) fail(errc::empty_sizes, "no set sizes given");
    if (trials == 0) fail(errc::invalid_argument, "need at least one trial");

    const VocabTrie trie(vocab);
    const auto order = rank_key_tokens(trie, trials, seed, key_template);

    // rank_of[token] = position in the frequency order, or infinity.
    std::unordered_map<uint32_t, uint64_t> rank_of;
    rank_of.reserve(order.size());
    for (uint64_t r = 0; r < order.size(); ++r) rank_of.emplace(order[r], r);

    CoverageCurve curve;
    curve.trials = trials;
    curve.seed = seed;
    for (uint64_t n : set_sizes) curve.points.push_back({n, 0.0, 0.0});

    CounterRng rng(seed, kStreamScoringKeys);
    for (uint64_t t = 0; t < trials; ++t) {
        const auto ids = tokenize_with_trie(trie, random_key(rng, key_template));
        // min rank that covers each position, sorted, lets every N reuse one pass
        std::vector<uint64_t> ranks(ids.size());
        for (size_t i = 0; i < ids.size(); ++i) {
            const auto it = rank_of.find(ids[i]);
            ranks[i] = it == rank_of.end() ? UINT64_MAX : it->second;
        }
        std::sort(ranks.begin(), ranks.end());
        for (auto& pt : curve.points) {
            const size_t covered =
                size_t(std::lower_bound(ranks.begin(), ranks.end(), pt.set_size) -
                       ranks.begin());
            pt.mean_coverage += ids.empty() ? 0.0 : double(covered) / double(ids.size());
            if (covered == ids.size()) pt.full_capture_prob += 1.0;
        }
    }
    for (auto& pt : curve.points) {
        pt.mean_coverage /= double(trials);
        pt.full_capture_prob /= double(trials);
    }
    return curve;
}

RotationPlan plan_rotation(const gguf::VocabTable& vocab,
                           size_t set_size,
                           uint64_t trials,
                           uint64_t seed,
                           double detection_prob,
                           uint64_t max_interactions,
                           std::string_view key_template) {
    if (set_size == 0) fail(errc::set_size_zero, "rotation needs set_size >= 1");
    if (trials == 0) fail(errc::invalid_argument, "need at least one trial");

    const VocabTrie trie(vocab);
    const auto pool = rank_key_tokens(trie, std::max<uint64_t>(trials, 1000), seed,
                                      key_template);

    RotationPlan plan;
    plan.trials = trials;

    CounterRng key_rng(seed, kStreamScoringKeys);
    CounterRng detect_rng(seed, kStreamDetection);

    double sum50 = 0.0, sum80 = 0.0, sum100 = 0.0;
    for (uint64_t t = 0; t < trials; ++t) {
        const auto ids = tokenize_with_trie(trie, random_key(key_rng, key_template));
        std::unordered_set<uint32_t> key_tokens(ids.begin(), ids.end());
        const size_t distinct = key_tokens.size();
        const size_t need50 = (distinct + 1) / 2;
        const size_t need80 = size_t((distinct * 8 + 9) / 10); // ceil(0.8 d)
        const size_t need100 = distinct;

        size_t captured = 0;
        uint64_t done50 = 0, done80 = 0, done100 = 0;
        size_t pool_pos = 0;
        uint64_t interaction = 0;
        // Each interaction burns set_size fresh candidates off the ranking;
        // captured tokens never return, and neither do misses (the attacker
        // cannot tell a missed token from an absent one and moves on).
        while (interaction < max_interactions) {
            ++interaction;
            const size_t begin = pool_pos;
            const size_t end = std::min(pool.size(), begin + set_size);
            for (size_t p = begin; p < end; ++p) {
                const uint32_t candidate = pool[p];
                if (key_tokens.count(candidate) &&
                    (detection_prob >= 1.0 || detect_rng.next_unit() < detection_prob)) {
                    ++captured;
                }
            }
            pool_pos = end;
            if (t == 0 && plan.rounds.size() < 64) {
                plan.rounds.emplace_back(pool.begin() + begin, pool.begin() + end);
            }
            if (!done50 && captured >= need50) done50 = interaction;
            if (!done80 && captured >= need80) done80 = interaction;
            if (!done100 && captured >= need100) done100 = interaction;
            if (done100) break;
            if (pool_pos >= pool.size()) break; // nothing left to try
        }
        if (!done50) { done50 = max_interactions; plan.budget_exhausted = true; }
        if (!done80) { done80 = max_interactions; plan.budget_exhausted = true; }
        if (!done100) { done100 = max_interactions; plan.budget_exhausted = true; }
        sum50 += double(done50);
        sum80 += double(done80);
        sum100 += double(done100);
    }
    plan.interactions_50 = sum50 / double(trials);
    plan.interactions_80 = sum80 / double(trials);
    plan.interactions_100 = sum100 / double(trials);
    return plan;
}

double expected_single_shot_leak(const FrequencyTable& table,
                                 size_t set_size,
                                 std::span<const uint32_t> response) {
    if (set_size > table.ranked.size()) {
        fail(errc::invalid_argument, "set_size exceeds frequency table length");
    }
    if (response.empty()) return 0.0;
    std::unordered_set<uint32_t> top;
    top.reserve(set_size);
    for (size_t i = 0; i < set_size; ++i) top.insert(table.ranked[i].first);
    size_t inside = 0;
    for (uint32_t id : response) inside += top.count(id);
    return double(inside) / double(response.size());
}

gguf::VocabTable make_uuid_fixture_vocab(uint64_t seed) {
    static constexpr char kHex[] = "0123456789abcdef";
    gguf::VocabTable vocab;
    vocab.tokens.push_back("-");
    for (char c : std::string_view(kHex, 16)) {
        vocab.tokens.push_back(std::string(1, c));
    }
    // 64 of the 256 hex pairs, drawn without replacement. Sparse pair
    // coverage keeps single characters in play, which is what makes the
    // fixture behave like a subword vocabulary.
    CounterRng rng(seed, 99);
    std::vector<uint16_t> pairs(256);
    for (uint16_t i = 0; i < 256; ++i) pairs[i] = i;
    for (size_t i = 0; i < 64; ++i) {
        const size_t j = i + size_t(rng.bounded(256 - i));
        std::swap(pairs[i], pairs[j]);
    }
    std::sort(pairs.begin(), pairs.begin() + 64);
    for (size_t i = 0; i < 64; ++i) {
        std::string pair;
        pair.push_back(kHex[pairs[i] >> 4]);
        pair.push_back(kHex[pairs[i] & 0xF]);
        vocab.tokens.push_back(pair);
    }
    for (uint32_t id = 0; id < vocab.tokens.size(); ++id) {
        vocab.reverse.emplace(vocab.tokens[id], id);
    }
    return vocab;
}

gguf::VocabTable load_vocab_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(errc::io_error, "cannot open vocab '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(errc::io_error, "vocab parse error: " + std::string(e.what()));
    }
    const auto& arr = j.contains("tokens") ? j["tokens"] : j;
    if (!arr.is_array()) fail(errc::io_error, "vocab json must be a token array");
    gguf::VocabTable vocab;
    vocab.tokens.reserve(arr.size());
    for (const auto& e : arr) {
        if (!e.is_string()) fail(errc::non_string_vocab_entry, "vocab entry not a string");
        vocab.tokens.push_back(e.get<std::string>());
    }
    for (uint32_t id = 0; id < vocab.tokens.size(); ++id) {
        vocab.reverse.emplace(vocab.tokens[id], id);
    }
    return vocab;
}

void save_vocab_json(const gguf::VocabTable& vocab, const std::string& path) {
    nlohmann::json j;
    j["tokens"] = vocab.tokens;
    std::ofstream out(path);
    if (!out) fail(errc::io_error, "cannot write vocab '" + path + "'");
    out << j.dump(2) << "\n";
}

} // namespace tokleak::planner
