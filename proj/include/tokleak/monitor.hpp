#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <unordered_set>
#include <vector>

#include "tokleak/gguf.hpp"
#include "tokleak/mapped_file.hpp"
#include "tokleak/probe.hpp"

namespace tokleak::monitor {

// Bumped by the test harness's replacement operator new; stays 0 in normal
// builds. Lets the loop report how many allocations happened while it ran.
extern std::atomic<uint64_t> g_alloc_probe;

struct MonitorEntry {
    uint32_t token_id;
    uint64_t probe_offset; // designated probe line, first line of the token's row
};

struct MonitorSet {
    std::vector<MonitorEntry> entries;
    uint32_t generation = 0;
    bool pool_exhausted = false; // set when a rotation ran out of candidates

    size_t size() const { return entries.size(); }
};

// One entry per token by default (its designated probe line). Probing more
// lines per token is possible but multiplies the revisit period, so it is
// off unless asked for; extra entries share the token id.
MonitorSet make_monitor_set(const gguf::EmbeddingLayout& layout,
                            std::span<const uint32_t> token_ids,
                            uint64_t line_size = 64,
                            size_t lines_per_token = 1);

// Replaces captured entries in place with the highest-priority pool
// candidates not already monitored or captured; surviving entries keep
// their order. Fewer candidates than vacancies shrinks the set and flags
// pool_exhausted.
MonitorSet rotate_set(const MonitorSet& current,
                      const std::unordered_set<uint32_t>& captured,
                      std::span<const uint32_t> pool,
                      const gguf::EmbeddingLayout& layout,
                      uint64_t line_size = 64);

// Token-id core of the rotation rule, shared with the planner's tests.
std::vector<uint32_t> rotate_ids(std::span<const uint32_t> current,
                                 const std::unordered_set<uint32_t>& captured,
                                 std::span<const uint32_t> pool,
                                 bool* pool_exhausted = nullptr);

struct HitRecord {
    uint64_t timestamp; // raw TSC at the end of the timed load
    uint32_t token_id;
    uint32_t latency;   // cycles, < threshold by construction
    uint32_t generation;
};

struct MonitorConfig {
    uint32_t threshold_cycles = 0;
    // Lower edge of the hit band, from Calibration::hit_low_cut. Latencies
    // below it are lines this core warmed or prefetched itself, not the
    // victim's. 0 disables the bound (same-core victim setups).
    uint32_t min_latency_cycles = 0;
    double duration_seconds = 1.0;
    uint64_t max_probes = 0; // 0 = no probe budget, stop on duration only
    double injected_overhead_us = 0.0;
    size_t buffer_capacity = 1u << 20;
    double cycles_per_us = 0.0; // from calibration
};

struct MonitorReport {
    std::vector<HitRecord> hits;
    bool overflow = false;
    uint64_t probes = 0;
    uint64_t loop_passes = 0;
    uint64_t start_tsc = 0;
    uint64_t end_tsc = 0;
    double mean_entry_cost_cycles = 0.0;
    double revisit_period_cycles = 0.0;
    uint64_t allocations_in_loop = 0;
};

// The attacker loop: Access -> Time -> Flush -> Record -> Next over the set,
// cycling until the duration or probe budget ends. Hits land in a
// preallocated buffer; there is no I/O, allocation, or syscall between the
// first and last probe.
MonitorReport run_round_robin(const MonitorSet& set,
                              const MonitorConfig& config,
                              const MappedFile& file);

// Mean cycles per flush+reload entry for a synthetic set of the given size.
double measure_loop_cost_cycles(size_t set_size,
                                const MappedFile& file,
                                uint64_t iterations = 100000);

} // namespace tokleak::monitor
