#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tokleak::sim {

// Phenomenological cache/attacker parameters. Time is microseconds as a real
// number throughout the simulator.
struct CacheParams {
    double residency_us = 10.0;       // mean lifetime of a victim-loaded line
    double per_probe_cost_us = 1.0;   // attacker cost per round-robin entry
    double false_positive_rate = 0.0; // per probe
    uint32_t spatial_noise_lines = 0; // hits duplicated onto +/- k set neighbours
};

struct VictimModel {
    std::vector<uint32_t> token_stream; // ground truth output
    double inter_token_us = 100.0;      // mean gap between generated tokens
    bool fixed_gaps = false;            // default exponential gaps
    double decoy_rate = 0.0;            // decoy accesses per microsecond
};

struct Detection {
    double time_us;
    uint32_t token_id;
    bool true_positive; // caused by a victim access of exactly this token
};

struct SimResult {
    std::vector<Detection> detected; // time-sorted
    uint64_t ground_truth_hits = 0;  // occurrences of monitored tokens in the stream
    uint64_t true_positives = 0;
    uint64_t missed = 0;
    uint64_t false_positives = 0;    // spurious probes + spatial-noise duplicates
    uint64_t stream_length = 0;
    double leak_fraction = 0.0;      // true_positives / ground_truth_hits (0 when 0/0)
};

// Event-driven model of one monitoring run. The victim emits token_stream at
// its gap cadence; each monitored access opens an exponential residency
// window; the attacker pointer advances one set entry per per_probe_cost_us
// and stalls overhead_us after every detection; a detection occurs iff the
// entry's next probe lands inside the open window. Decoy accesses add
// eviction hazard, shortening every window. Deterministic per (inputs, seed).
SimResult simulate_run(const VictimModel& victim,
                       std::span<const uint32_t> set_ids,
                       const CacheParams& cache,
                       double overhead_us,
                       uint64_t seed);

// ---- scenario files ------------------------------------------------------

struct StreamSpec {
    enum class Kind { explicit_tokens, zipf, repeat };
    Kind kind = Kind::explicit_tokens;
    std::vector<uint32_t> tokens; // explicit
    uint32_t vocab = 0;           // zipf
    double exponent = 1.0;        // zipf
    uint64_t length = 0;          // zipf / repeat
    uint32_t token = 0;           // repeat
};

struct SetSpec {
    enum class Kind { explicit_tokens, top_n };
    Kind kind = Kind::top_n;
    std::vector<uint32_t> tokens;
    uint64_t n = 0;
};

struct Scenario {
    StreamSpec stream;
    double inter_token_us = 100.0;
    bool fixed_gaps = false;
    double decoy_rate = 0.0;
    CacheParams cache;
    SetSpec set;
    double overhead_us = 0.0;
};

Scenario load_scenario(const std::string& path);
Scenario parse_scenario_json(const std::string& text);

// Materialized per-trial inputs; generative streams are drawn with the
// trial's seed, so trials are independent but reproducible.
VictimModel materialize_victim(const Scenario& scenario, uint64_t trial_seed);
std::vector<uint32_t> materialize_set(const SetSpec& set);

// ---- sweeps ---------------------------------------------------------------

struct SweepPoint {
    double x = 0.0;          // grid value (overhead_us, set size, decoy rate)
    double mean_leak = 0.0;
    double stddev = 0.0;     // sample stddev of per-trial leak fractions
    double extra = 0.0;      // sweep-specific (decoys: victim slowdown proxy)
};

// Repeats simulate_run per grid point with per-trial seeds seed + trial, the
// same trial seeds at every grid point.
std::vector<SweepPoint> sweep_overhead(const Scenario& scenario,
                                       std::span<const double> overhead_grid_us,
                                       uint64_t trials,
                                       uint64_t seed);

// Monitored set is the top-N of the reference ranking (token id == rank);
// leak here is the fraction of ALL victim tokens recovered, so coverage
// gains and revisit-period losses trade off in one curve.
std::vector<SweepPoint> sweep_set_size(const Scenario& scenario,
                                       std::span<const uint64_t> sizes,
                                       uint64_t trials,
                                       uint64_t seed);

std::vector<SweepPoint> evaluate_decoys(const Scenario& scenario,
                                        std::span<const double> decoy_rates,
                                        uint64_t trials,
                                        uint64_t seed);

// Zipf(exponent) sampler over ranks 0..vocab-1, shared by sweeps and tests.
class ZipfSampler {
public:
    ZipfSampler(uint32_t vocab, double exponent);
    uint32_t sample(double unit) const; // unit in [0,1)
    double probability(uint32_t rank) const;

private:
    std::vector<double> cumulative_;
};

} // namespace tokleak::sim
