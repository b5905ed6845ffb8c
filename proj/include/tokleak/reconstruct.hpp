#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "tokleak/gguf.hpp"

namespace tokleak::reconstruct {

// A time-stamped token event. Time is unit-agnostic (cycles for hardware
// hit records, microseconds for simulator detections); the debounce window
// just has to use the same unit.
struct TokenEvent {
    double time;
    uint32_t token_id;
};

// Collapses warm-line streaks: stream-consecutive hits of the same token
// merge into one event at the first timestamp when each hit follows the
// previous within the window. A different token always breaks the streak.
// Idempotent for any fixed window.
std::vector<TokenEvent> collapse_hits(std::span<const TokenEvent> hits,
                                      double debounce_window);

struct LeakReport {
    std::vector<TokenEvent> recovered;
    double precision = 1.0; // of an empty recovery: 1.0 by convention (no claims made)
    double recall = 0.0;    // the leak fraction
    uint64_t matched = 0;
    uint64_t truth_occurrences = 0; // denominator actually used
    uint64_t gap_markers = 0;       // ground-truth positions not recovered
    std::string rendered;           // truth-aligned text; unrecovered positions show a gap mark
};

// Scores recovered events against a ground-truth token stream. Matching is
// order-preserving and per token id: the i-th recovered event of a token
// pairs with the i-th ground-truth occurrence of that token. recall counts
// matched occurrences of monitored tokens; pass full_stream_denominator to
// divide by the whole stream instead (recall is then bounded by coverage).
LeakReport score_leak(std::span<const TokenEvent> recovered,
                      std::span<const uint32_t> ground_truth,
                      const std::unordered_set<uint32_t>& monitored,
                      const gguf::VocabTable* vocab = nullptr,
                      bool full_stream_denominator = false);

} // namespace tokleak::reconstruct
