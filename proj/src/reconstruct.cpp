#include "tokleak/reconstruct.hpp"

#include <algorithm>
#include <unordered_map>

#include "tokleak/errors.hpp"

namespace tokleak::reconstruct {

std::vector<TokenEvent> collapse_hits(std::span<const TokenEvent> hits,
                                      double debounce_window) {
    for (size_t i = 1; i < hits.size(); ++i) {
        if (hits[i].time < hits[i - 1].time) {
            fail(errc::unsorted_input,
                 "hit " + std::to_string(i) + " is earlier than its predecessor");
        }
    }
    std::vector<TokenEvent> out;
    out.reserve(hits.size());
    bool open = false;
    uint32_t open_token = 0;
    double last_hit_time = 0.0;
    for (const TokenEvent& h : hits) {
        if (open && h.token_id == open_token &&
            h.time - last_hit_time <= debounce_window && debounce_window > 0.0) {
            last_hit_time = h.time; // extends the streak, no new event
            continue;
        }
        out.push_back(h);
        open = true;
        open_token = h.token_id;
        last_hit_time = h.time;
    }
    return out;
}

LeakReport score_leak(std::span<const TokenEvent> recovered,
                      std::span<const uint32_t> ground_truth,
                      const std::unordered_set<uint32_t>& monitored,
                      const gguf::VocabTable* vocab,
                      bool full_stream_denominator) {
    LeakReport report;
    report.recovered.assign(recovered.begin(), recovered.end());

    std::unordered_map<uint32_t, uint64_t> recovered_count;
    for (const TokenEvent& e : recovered) ++recovered_count[e.token_id];

    // Order-preserving per-token matching: walk the truth stream and consume
    // recovered events of each token in order.
    std::vector<bool> truth_matched(ground_truth.size(), false);
    uint64_t monitored_occurrences = 0;
    for (size_t i = 0; i < ground_truth.size(); ++i) {
        const uint32_t id = ground_truth[i];
        if (monitored.count(id)) ++monitored_occurrences;
        auto it = recovered_count.find(id);
        if (it != recovered_count.end() && it->second > 0) {
            --it->second;
            truth_matched[i] = true;
            ++report.matched;
        }
    }

    report.truth_occurrences =
        full_stream_denominator ? ground_truth.size() : monitored_occurrences;
    report.recall = report.truth_occurrences
                        ? double(report.matched) / double(report.truth_occurrences)
                        : 0.0;
    report.precision =
        recovered.empty() ? 1.0 : double(report.matched) / double(recovered.size());

    std::string text;
    for (size_t i = 0; i < ground_truth.size(); ++i) {
        if (truth_matched[i]) {
            if (vocab && ground_truth[i] < vocab->tokens.size()) {
                text += vocab->tokens[ground_truth[i]];
            } else {
                text += "<" + std::to_string(ground_truth[i]) + ">";
            }
        } else {
            text += "▯"; // gap mark
            ++report.gap_markers;
        }
    }
    report.rendered = std::move(text);
    return report;
}

} // namespace tokleak::reconstruct
