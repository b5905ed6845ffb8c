#include <doctest.h>

#include <numeric>

#include "tokleak/errors.hpp"
#include "tokleak/reconstruct.hpp"
#include "tokleak/rng.hpp"
#include "tokleak/sim.hpp"

using namespace tokleak;
using namespace tokleak::reconstruct;

namespace {

// Spec-literal reference for collapse: hit i is dropped iff it has the same
// token as hit i-1 and follows it within the window.
std::vector<TokenEvent> collapse_reference(const std::vector<TokenEvent>& hits,
                                           double window) {
    std::vector<TokenEvent> out;
    for (size_t i = 0; i < hits.size(); ++i) {
        const bool merged = i > 0 && window > 0.0 &&
                            hits[i].token_id == hits[i - 1].token_id &&
                            hits[i].time - hits[i - 1].time <= window;
        if (!merged) out.push_back(hits[i]);
    }
    return out;
}

bool same_events(const std::vector<TokenEvent>& a, const std::vector<TokenEvent>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].time != b[i].time || a[i].token_id != b[i].token_id) return false;
    }
    return true;
}

} // namespace

TEST_SUITE("reconstruct") {

TEST_CASE("collapse merges same-token streaks") {
    const std::vector<TokenEvent> hits = {{100, 5}, {101, 5}, {500, 7}};
    const auto out = collapse_hits(hits, 50.0);
    REQUIRE(out.size() == 2);
    CHECK(out[0].time == 100);
    CHECK(out[0].token_id == 5);
    CHECK(out[1].time == 500);
    CHECK(out[1].token_id == 7);
}

TEST_CASE("window zero is the identity") {
    const std::vector<TokenEvent> hits = {{100, 5}, {100, 5}, {101, 5}, {102, 6}};
    CHECK(same_events(collapse_hits(hits, 0.0), hits));
}

TEST_CASE("unsorted input rejected") {
    const std::vector<TokenEvent> hits = {{100, 5}, {50, 5}};
    try {
        (void)collapse_hits(hits, 10.0);
        FAIL("expected unsorted_input");
    } catch (const error& e) {
        CHECK(e.code() == errc::unsorted_input);
    }
}

TEST_CASE("collapse agrees with the reference on random small sequences") {
    CounterRng rng(31337, 9);
    for (int trial = 0; trial < 3000; ++trial) {
        const uint64_t n = rng.bounded(7);
        std::vector<TokenEvent> hits;
        double t = 0.0;
        for (uint64_t i = 0; i < n; ++i) {
            t += double(rng.bounded(80));
            hits.push_back({t, uint32_t(rng.bounded(3))});
        }
        const double window = double(rng.bounded(100));
        const auto fast = collapse_hits(hits, window);
        const auto slow = collapse_reference(hits, window);
        REQUIRE(same_events(fast, slow));

        // Idempotence for the same window.
        const auto again = collapse_hits(fast, window);
        REQUIRE(same_events(again, fast));
    }
}

TEST_CASE("distinct tokens never merge even at equal timestamps") {
    const std::vector<TokenEvent> hits = {{100, 1}, {100, 2}, {100, 1}};
    CHECK(collapse_hits(hits, 1000.0).size() == 3);
}

TEST_CASE("perfect recovery scores ones") {
    const std::vector<uint32_t> truth = {1, 2, 1, 3, 2};
    const std::unordered_set<uint32_t> monitored = {1, 2};
    std::vector<TokenEvent> recovered;
    double t = 0;
    for (uint32_t id : truth) {
        t += 10;
        if (monitored.count(id)) recovered.push_back({t, id});
    }
    const LeakReport report = score_leak(recovered, truth, monitored);
    CHECK(report.recall == 1.0);
    CHECK(report.precision == 1.0);
    CHECK(report.truth_occurrences == 4);
    CHECK(report.gap_markers == 1); // the unmonitored token 3
}

TEST_CASE("empty recovery: recall zero, precision one by convention") {
    const std::vector<uint32_t> truth = {1, 2, 3};
    const LeakReport report = score_leak({}, truth, {1, 2, 3});
    CHECK(report.recall == 0.0);
    CHECK(report.precision == 1.0);
    CHECK(report.gap_markers == 3);
}

TEST_CASE("full-stream denominator bounds recall by coverage") {
    const std::vector<uint32_t> truth = {1, 1, 2, 2, 2, 9, 9, 9, 9};
    const std::unordered_set<uint32_t> monitored = {1, 2};
    std::vector<TokenEvent> recovered = {{1, 1}, {2, 1}, {3, 2}, {4, 2}, {5, 2}};
    const LeakReport full = score_leak(recovered, truth, monitored, nullptr, true);
    const double coverage = 5.0 / 9.0;
    CHECK(full.recall <= coverage + 1e-12);
    CHECK(full.recall == doctest::Approx(coverage)); // everything monitored was caught
}

TEST_CASE("rendering marks unrecovered positions") {
    gguf::VocabTable vocab;
    vocab.tokens = {"he", "llo", "!"};
    for (uint32_t i = 0; i < 3; ++i) vocab.reverse.emplace(vocab.tokens[i], i);
    const std::vector<uint32_t> truth = {0, 1, 2};
    const std::vector<TokenEvent> recovered = {{1, 0}, {2, 2}};
    const LeakReport report = score_leak(recovered, truth, {0, 1, 2}, &vocab);
    CHECK(report.rendered == "he▯!");
    CHECK(report.gap_markers == 1);
}

TEST_CASE("simulator detections score back to the simulator leak fraction") {
    sim::VictimModel victim;
    CounterRng stream_rng(5150, 10);
    for (int i = 0; i < 300; ++i) {
        victim.token_stream.push_back(uint32_t(stream_rng.bounded(40)));
    }
    victim.inter_token_us = 60.0;
    sim::CacheParams cache;
    cache.residency_us = 25.0;
    cache.per_probe_cost_us = 1.0;

    std::vector<uint32_t> set_ids(25);
    std::iota(set_ids.begin(), set_ids.end(), 0);
    const std::unordered_set<uint32_t> monitored(set_ids.begin(), set_ids.end());

    for (uint64_t seed = 0; seed < 10; ++seed) {
        const sim::SimResult r = sim::simulate_run(victim, set_ids, cache, 20.0, seed);
        std::vector<TokenEvent> events;
        for (const auto& d : r.detected) events.push_back({d.time_us, d.token_id});
        const LeakReport report = score_leak(events, victim.token_stream, monitored);
        CHECK(report.recall == r.leak_fraction);
        CHECK(report.matched == r.true_positives);
        CHECK(report.truth_occurrences == r.ground_truth_hits);
    }
}

} // TEST_SUITE
