#include "tokleak/sim.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "tokleak/errors.hpp"
#include "tokleak/rng.hpp"

namespace tokleak::sim {

namespace {

// RNG stream ids within a trial's Philox key. Draws are indexed by stable
// counters (access index, probe index, ...) so skipping a draw never shifts
// any other draw.
constexpr uint64_t kStreamGaps = 0;
constexpr uint64_t kStreamWindows = 1;
constexpr uint64_t kStreamFalsePositives = 2;
constexpr uint64_t kStreamTokens = 3;

// Probe schedule with detection stalls. Probe k of the round-robin visits
// set entry (k mod S); without stalls it happens at k * per_probe. A stall
// recorded at probe k delays every later probe by its overhead. Stall
// indices are appended in strictly increasing order (pops are chronological).
class ProbeSchedule {
public:
    explicit ProbeSchedule(double per_probe) : per_probe_(per_probe) {}

    double time_of(uint64_t k) const {
        double stall = 0.0;
        if (!stall_index_.empty()) {
            const auto it = std::lower_bound(stall_index_.begin(), stall_index_.end(), k);
            if (it != stall_index_.begin()) {
                stall = stall_cum_[size_t(it - stall_index_.begin()) - 1];
            }
        }
        return double(k) * per_probe_ + stall;
    }

    // Smallest probe index whose time is >= t.
    uint64_t first_index_at_or_after(double t) const {
        if (t <= 0.0) return 0;
        uint64_t lo = 0;
        uint64_t hi = uint64_t(t / per_probe_) + 1; // time_of(hi) >= hi*c >= t
        while (lo < hi) {
            const uint64_t mid = lo + (hi - lo) / 2;
            if (time_of(mid) >= t) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        return lo;
    }

    void add_stall(uint64_t k, double overhead) {
        assert(stall_index_.empty() || k > stall_index_.back());
        total_ += overhead;
        stall_index_.push_back(k);
        stall_cum_.push_back(total_);
    }

    double per_probe() const { return per_probe_; }

private:
    double per_probe_;
    std::vector<uint64_t> stall_index_;
    std::vector<double> stall_cum_;
    double total_ = 0.0;
};

struct Candidate {
    double scheduled_time; // probe time when pushed; revalidated on pop
    uint64_t probe_index;
    uint32_t entry;
    double window_end;
    bool exact; // false for spatial-noise duplicates
    uint64_t sequence;
};

struct CandidateLater {
    bool operator()(const Candidate& a, const Candidate& b) const {
        if (a.scheduled_time != b.scheduled_time) return a.scheduled_time > b.scheduled_time;
        return a.sequence > b.sequence;
    }
};

} // namespace

SimResult simulate_run(const VictimModel& victim,
                       std::span<const uint32_t> set_ids,
                       const CacheParams& cache,
                       double overhead_us,
                       uint64_t seed) {
    if (set_ids.empty()) {
        fail(errc::empty_set, "simulated monitor set is empty");
    }
    if (victim.inter_token_us <= 0.0) {
        fail(errc::invalid_argument, "inter_token_us must be positive");
    }
    if (cache.false_positive_rate < 0.0 || cache.false_positive_rate >= 0.05) {
        fail(errc::invalid_argument, "false_positive_rate must be in [0, 0.05)");
    }

    const size_t set_size = set_ids.size();
    std::unordered_map<uint32_t, uint32_t> entry_of;
    entry_of.reserve(set_size);
    for (uint32_t i = 0; i < set_size; ++i) {
        entry_of.emplace(set_ids[i], i);
    }

    CounterRng gap_rng(seed, kStreamGaps);
    const CounterRng window_rng(seed, kStreamWindows);
    const CounterRng fp_rng(seed, kStreamFalsePositives);

    // Eviction hazard: background turnover plus decoy pressure. Each decoy
    // access per microsecond contributes unit hazard, so the effective mean
    // window is residency / (1 + decoy_rate * residency).
    const double hazard = 1.0 / cache.residency_us + victim.decoy_rate;
    const double window_mean = 1.0 / hazard;

    // Victim emission times.
    const size_t stream_len = victim.token_stream.size();
    std::vector<double> access_time(stream_len);
    if (victim.fixed_gaps) {
        const double phase = gap_rng.unit_at(0) * victim.inter_token_us;
        for (size_t i = 0; i < stream_len; ++i) {
            access_time[i] = phase + double(i) * victim.inter_token_us;
        }
    } else {
        double t = 0.0;
        for (size_t i = 0; i < stream_len; ++i) {
            t += gap_rng.exponential_at(i, victim.inter_token_us);
            access_time[i] = t;
        }
    }

    SimResult result;
    result.stream_length = stream_len;

    const uint32_t noise = cache.spatial_noise_lines;
    const uint64_t window_draws_per_access = uint64_t(noise) * 2 + 1;
    const double c = cache.per_probe_cost_us;

    // Degenerate probe cost: the attacker revisits instantly, every
    // monitored access is caught the moment it happens.
    if (c <= 0.0) {
        for (size_t i = 0; i < stream_len; ++i) {
            const auto it = entry_of.find(victim.token_stream[i]);
            if (it == entry_of.end()) continue;
            ++result.ground_truth_hits;
            ++result.true_positives;
            result.detected.push_back({access_time[i], victim.token_stream[i], true});
        }
        result.leak_fraction = result.ground_truth_hits
                                   ? double(result.true_positives) / double(result.ground_truth_hits)
                                   : 0.0;
        return result;
    }

    ProbeSchedule schedule(c);
    std::priority_queue<Candidate, std::vector<Candidate>, CandidateLater> pending;
    uint64_t sequence = 0;

    // False-positive probe indices via geometric skips; generated lazily.
    const double fp_rate = cache.false_positive_rate;
    uint64_t fp_cursor = 0; // draw counter on the fp stream
    uint64_t next_fp_index = UINT64_MAX;
    auto advance_fp = [&](uint64_t from_index) {
        if (fp_rate <= 0.0) return;
        double u = fp_rng.unit_at(fp_cursor++);
        const uint64_t skip = uint64_t(std::log1p(-u) / std::log1p(-fp_rate));
        next_fp_index = from_index + 1 + skip;
    };
    if (fp_rate > 0.0) advance_fp(0);

    uint64_t last_stall_index = UINT64_MAX;
    auto record_detection = [&](uint64_t probe_index, double time, uint32_t token,
                                bool exact) {
        result.detected.push_back({time, token, exact});
        if (exact) {
            ++result.true_positives;
        } else {
            ++result.false_positives;
        }
        if (overhead_us > 0.0 && probe_index != last_stall_index) {
            schedule.add_stall(probe_index, overhead_us);
            last_stall_index = probe_index;
        } else if (probe_index == last_stall_index) {
            // same physical probe: one reload, one stall
        } else {
            last_stall_index = probe_index;
        }
    };

    uint64_t horizon_index = 0; // highest candidate index seen, bounds FP generation
    size_t next_access = 0;

    auto push_candidates_for_access = [&](size_t i) {
        const uint32_t token = victim.token_stream[i];
        const auto it = entry_of.find(token);
        if (it == entry_of.end()) return;
        ++result.ground_truth_hits;
        const double t = access_time[i];
        const int64_t center = int64_t(it->second);
        for (int64_t d = -int64_t(noise); d <= int64_t(noise); ++d) {
            const int64_t e = center + d;
            if (e < 0 || e >= int64_t(set_size)) continue;
            const uint64_t draw = uint64_t(i) * window_draws_per_access +
                                  uint64_t(d + int64_t(noise));
            const double window = window_rng.exponential_at(draw, window_mean);
            const uint64_t k_t = schedule.first_index_at_or_after(t);
            const uint64_t k = k_t + (uint64_t(e) + set_size -
                                      (k_t % set_size)) % set_size;
            const double probe_time = schedule.time_of(k);
            const bool exact = (d == 0);
            if (probe_time <= t + window) {
                pending.push({probe_time, k, uint32_t(e), t + window, exact, sequence++});
                horizon_index = std::max(horizon_index, k);
            } else if (exact) {
                ++result.missed;
            }
        }
    };

    // Chronological sweep over accesses, pending candidate probes, and
    // false-positive probes. Candidate times are lazy: a pop whose schedule
    // time moved (a stall landed before it) is re-queued at the new time.
    for (;;) {
        const double t_access = next_access < stream_len
                                    ? access_time[next_access]
                                    : std::numeric_limits<double>::infinity();
        double t_candidate = std::numeric_limits<double>::infinity();
        if (!pending.empty()) t_candidate = pending.top().scheduled_time;
        double t_fp = std::numeric_limits<double>::infinity();
        if (fp_rate > 0.0 && next_fp_index != UINT64_MAX &&
            next_fp_index <= horizon_index + set_size) {
            t_fp = schedule.time_of(next_fp_index);
        }

        if (t_access == std::numeric_limits<double>::infinity() &&
            t_candidate == std::numeric_limits<double>::infinity() &&
            t_fp == std::numeric_limits<double>::infinity()) {
            break;
        }

        if (t_access <= t_candidate && t_access <= t_fp) {
            push_candidates_for_access(next_access++);
            continue;
        }
        if (t_candidate <= t_fp) {
            Candidate cand = pending.top();
            pending.pop();
            const double now = schedule.time_of(cand.probe_index);
            if (now > cand.scheduled_time) {
                cand.scheduled_time = now; // a stall moved this probe; re-queue
                pending.push(cand);
                continue;
            }
            if (now > cand.window_end) {
                if (cand.exact) ++result.missed; // evicted before the probe arrived
                continue;
            }
            record_detection(cand.probe_index, now, set_ids[cand.entry], cand.exact);
            continue;
        }
        // Spurious low-latency probe: recorded as a hit on whatever entry the
        // round-robin pointer is visiting.
        const uint64_t k = next_fp_index;
        record_detection(k, schedule.time_of(k), set_ids[k % set_size], false);
        advance_fp(k);
    }

    assert(result.true_positives + result.missed == result.ground_truth_hits);
    result.leak_fraction = result.ground_truth_hits
                               ? double(result.true_positives) / double(result.ground_truth_hits)
                               : 0.0;
    return result;
}

// ---- scenarios -------------------------------------------------------------

namespace {

StreamSpec parse_stream(const nlohmann::json& j) {
    StreamSpec s;
    const std::string kind = j.value("kind", "explicit");
    if (kind == "explicit") {
        s.kind = StreamSpec::Kind::explicit_tokens;
        s.tokens = j.at("tokens").get<std::vector<uint32_t>>();
    } else if (kind == "zipf") {
        s.kind = StreamSpec::Kind::zipf;
        s.vocab = j.at("vocab").get<uint32_t>();
        s.exponent = j.value("exponent", 1.0);
        s.length = j.at("length").get<uint64_t>();
    } else if (kind == "repeat") {
        s.kind = StreamSpec::Kind::repeat;
        s.token = j.at("token").get<uint32_t>();
        s.length = j.at("count").get<uint64_t>();
    } else {
        fail(errc::invalid_argument, "unknown stream kind '" + kind + "'");
    }
    return s;
}

SetSpec parse_set(const nlohmann::json& j) {
    SetSpec s;
    const std::string kind = j.value("kind", "top_n");
    if (kind == "explicit") {
        s.kind = SetSpec::Kind::explicit_tokens;
        s.tokens = j.at("tokens").get<std::vector<uint32_t>>();
    } else if (kind == "top_n") {
        s.kind = SetSpec::Kind::top_n;
        s.n = j.at("n").get<uint64_t>();
    } else {
        fail(errc::invalid_argument, "unknown set kind '" + kind + "'");
    }
    return s;
}

} // namespace

Scenario parse_scenario_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(errc::io_error, std::string("scenario parse error: ") + e.what());
    }
    Scenario s;
    const auto& victim = j.at("victim");
    s.stream = parse_stream(victim.at("stream"));
    s.inter_token_us = victim.at("inter_token_us").get<double>();
    s.fixed_gaps = victim.value("gap_model", "exponential") == std::string("fixed");
    s.decoy_rate = victim.value("decoy_rate", 0.0);

    const auto& cache = j.at("cache");
    s.cache.residency_us = cache.at("residency_us").get<double>();
    s.cache.per_probe_cost_us = cache.at("per_probe_cost_us").get<double>();
    s.cache.false_positive_rate = cache.value("false_positive_rate", 0.0);
    s.cache.spatial_noise_lines = cache.value("spatial_noise_lines", 0u);

    const auto& mon = j.at("monitor");
    s.set = parse_set(mon.at("set"));
    s.overhead_us = mon.value("overhead_us", 0.0);
    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(errc::io_error, "cannot open scenario '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_scenario_json(ss.str());
}

ZipfSampler::ZipfSampler(uint32_t vocab, double exponent) {
    if (vocab == 0) fail(errc::invalid_argument, "zipf vocab must be positive");
    cumulative_.resize(vocab);
    double total = 0.0;
    for (uint32_t i = 0; i < vocab; ++i) {
        total += 1.0 / std::pow(double(i + 1), exponent);
        cumulative_[i] = total;
    }
    for (auto& c : cumulative_) c /= total;
}

uint32_t ZipfSampler::sample(double unit) const {
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), unit);
    return uint32_t(std::min<size_t>(size_t(it - cumulative_.begin()),
                                     cumulative_.size() - 1));
}

double ZipfSampler::probability(uint32_t rank) const {
    if (rank >= cumulative_.size()) return 0.0;
    return rank == 0 ? cumulative_[0] : cumulative_[rank] - cumulative_[rank - 1];
}

VictimModel materialize_victim(const Scenario& scenario, uint64_t trial_seed) {
    VictimModel v;
    v.inter_token_us = scenario.inter_token_us;
    v.fixed_gaps = scenario.fixed_gaps;
    v.decoy_rate = scenario.decoy_rate;
    switch (scenario.stream.kind) {
        case StreamSpec::Kind::explicit_tokens:
            v.token_stream = scenario.stream.tokens;
            break;
        case StreamSpec::Kind::repeat:
            v.token_stream.assign(scenario.stream.length, scenario.stream.token);
            break;
        case StreamSpec::Kind::zipf: {
            static thread_local std::unordered_map<uint64_t, ZipfSampler> cache;
            const uint64_t key =
                (uint64_t(scenario.stream.vocab) << 16) ^
                uint64_t(scenario.stream.exponent * 1024.0);
            auto it = cache.find(key);
            if (it == cache.end()) {
                it = cache.emplace(key, ZipfSampler(scenario.stream.vocab,
                                                    scenario.stream.exponent)).first;
            }
            const CounterRng rng(trial_seed, kStreamTokens);
            v.token_stream.resize(scenario.stream.length);
            for (uint64_t i = 0; i < scenario.stream.length; ++i) {
                v.token_stream[i] = it->second.sample(rng.unit_at(i));
            }
            break;
        }
    }
    return v;
}

std::vector<uint32_t> materialize_set(const SetSpec& set) {
    if (set.kind == SetSpec::Kind::explicit_tokens) {
        return set.tokens;
    }
    std::vector<uint32_t> ids(set.n);
    for (uint64_t i = 0; i < set.n; ++i) ids[i] = uint32_t(i);
    return ids;
}

// ---- sweeps ----------------------------------------------------------------

namespace {

struct TrialStats {
    double mean = 0.0;
    double stddev = 0.0;
};

TrialStats summarize(const std::vector<double>& xs) {
    TrialStats s;
    if (xs.empty()) return s;
    double sum = 0.0;
    for (double x : xs) sum += x;
    s.mean = sum / double(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(ss / double(xs.size() - 1));
    }
    return s;
}

} // namespace

std::vector<SweepPoint> sweep_overhead(const Scenario& scenario,
                                       std::span<const double> overhead_grid_us,
                                       uint64_t trials,
                                       uint64_t seed) {
    if (overhead_grid_us.empty()) fail(errc::empty_grid, "overhead grid is empty");
    if (trials == 0) fail(errc::invalid_argument, "need at least one trial");
    const auto set = materialize_set(scenario.set);
    std::vector<SweepPoint> out;
    out.reserve(overhead_grid_us.size());
    for (double overhead : overhead_grid_us) {
        std::vector<double> leaks(trials);
        for (uint64_t trial = 0; trial < trials; ++trial) {
            const uint64_t trial_seed = seed + trial;
            const VictimModel v = materialize_victim(scenario, trial_seed);
            leaks[trial] =
                simulate_run(v, set, scenario.cache, overhead, trial_seed).leak_fraction;
        }
        const TrialStats st = summarize(leaks);
        out.push_back({overhead, st.mean, st.stddev, 0.0});
    }
    return out;
}

std::vector<SweepPoint> sweep_set_size(const Scenario& scenario,
                                       std::span<const uint64_t> sizes,
                                       uint64_t trials,
                                       uint64_t seed) {
    if (sizes.empty()) fail(errc::empty_sizes, "set-size grid is empty");
    if (!std::is_sorted(sizes.begin(), sizes.end())) {
        fail(errc::invalid_argument, "set sizes must be ascending");
    }
    if (trials == 0) fail(errc::invalid_argument, "need at least one trial");
    std::vector<SweepPoint> out;
    out.reserve(sizes.size());
    for (uint64_t n : sizes) {
        SetSpec spec;
        spec.kind = SetSpec::Kind::top_n;
        spec.n = n;
        const auto set = materialize_set(spec);
        std::vector<double> leaks(trials);
        for (uint64_t trial = 0; trial < trials; ++trial) {
            const uint64_t trial_seed = seed + trial;
            const VictimModel v = materialize_victim(scenario, trial_seed);
            const SimResult r =
                simulate_run(v, set, scenario.cache, scenario.overhead_us, trial_seed);
            leaks[trial] = r.stream_length
                               ? double(r.true_positives) / double(r.stream_length)
                               : 0.0;
        }
        const TrialStats st = summarize(leaks);
        out.push_back({double(n), st.mean, st.stddev, 0.0});
    }
    return out;
}

std::vector<SweepPoint> evaluate_decoys(const Scenario& scenario,
                                        std::span<const double> decoy_rates,
                                        uint64_t trials,
                                        uint64_t seed) {
    if (decoy_rates.empty()) fail(errc::empty_grid, "decoy grid is empty");
    if (trials == 0) fail(errc::invalid_argument, "need at least one trial");
    const auto set = materialize_set(scenario.set);
    std::vector<SweepPoint> out;
    out.reserve(decoy_rates.size());
    for (double rate : decoy_rates) {
        std::vector<double> leaks(trials);
        for (uint64_t trial = 0; trial < trials; ++trial) {
            const uint64_t trial_seed = seed + trial;
            VictimModel v = materialize_victim(scenario, trial_seed);
            v.decoy_rate = rate;
            leaks[trial] =
                simulate_run(v, set, scenario.cache, scenario.overhead_us, trial_seed)
                    .leak_fraction;
        }
        const TrialStats st = summarize(leaks);
        // Slowdown proxy: extra decoy accesses issued per generated token.
        out.push_back({rate, st.mean, st.stddev, rate * scenario.inter_token_us});
    }
    return out;
}

} // namespace tokleak::sim
