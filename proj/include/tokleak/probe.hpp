#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tokleak/mapped_file.hpp"

namespace tokleak::probe {

// Latency histogram at 1-cycle resolution. Values above the cap clamp into
// the top bin; the cap comfortably exceeds any miss latency we care about.
class Histogram {
public:
    static constexpr uint32_t kMaxCycles = 2000;

    Histogram() : bins_(kMaxCycles + 1, 0) {}

    void add(uint32_t cycles) {
        ++bins_[cycles > kMaxCycles ? kMaxCycles : cycles];
        ++count_;
    }

    uint64_t count() const { return count_; }
    std::span<const uint64_t> bins() const { return bins_; }

    // Nearest-rank quantile: smallest cycle value v such that at least
    // ceil(p * count) samples are <= v.
    uint32_t quantile(double p) const;
    uint32_t median() const { return quantile(0.5); }
    double mean() const;
    double stddev() const; // sample stddev (n - 1)

private:
    std::vector<uint64_t> bins_;
    uint64_t count_ = 0;
};

struct Calibration {
    Histogram hit_latencies;  // reloads of victim-warmed lines
    Histogram miss_latencies; // reloads of flushed lines
    uint32_t threshold = 0;   // cycles; hit iff hit_low_cut <= latency < threshold
    uint32_t hit_p99 = 0;
    double hit_stddev = 0.0;
    uint32_t hit_median = 0;
    uint32_t miss_median = 0;
    double cycles_per_us = 0.0; // measured TSC rate, 0 when not measured

    // When the hit distribution was measured cross-core (a helper thread on a
    // sibling core re-warms each line, reproducing the attack geometry), the
    // monitor can additionally reject latencies below the self-hit band:
    // lines this core warmed (or prefetched) itself read far faster than a
    // line fetched from the shared cache. 0 disables the lower bound.
    Histogram self_hit_latencies;
    uint32_t hit_low_cut = 0;
    bool cross_core = false;
    int victim_core = -1;

    bool classifies_hit(uint64_t cycles) const {
        return cycles >= hit_low_cut && cycles < threshold;
    }
};

// True when the CPU exposes rdtsc + clflush (checked via cpuid at runtime).
bool platform_supported();
std::string platform_report();

// Serialized cycle read; monotonically non-decreasing on a pinned thread.
uint64_t cycle_timestamp();

struct TimedLoad {
    uint64_t cycles;
    uint64_t end_tsc;
};

// Unchecked primitives for the hot loop. Callers validate the mapping once
// up front via the checked overloads below.
TimedLoad timed_load_raw(const volatile void* p);
void flush_raw(const volatile void* p);

// Checked variants used outside hot loops: offset is validated against the
// mapping before any flush or load is issued.
uint64_t timed_load(const MappedFile& file, uint64_t offset);
void flush_line(const MappedFile& file, uint64_t offset);

// TSC increments per microsecond, measured against the monotonic clock.
double measure_cycles_per_us();

void pin_to_core(int core);

// Loads whatever line the controlling thread posts, from another core:
// stands in for a victim re-caching a flushed line. Used by calibration and
// by hardware tests that need ground-truth cross-core warm lines.
class CrossCoreWarmer {
public:
    explicit CrossCoreWarmer(int core); // core < 0: unpinned
    ~CrossCoreWarmer();
    CrossCoreWarmer(const CrossCoreWarmer&) = delete;
    CrossCoreWarmer& operator=(const CrossCoreWarmer&) = delete;

    // Blocks until the helper has loaded the line.
    void warm(const volatile uint8_t* p);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// First allowed core other than the current one, or -1.
int pick_other_core();

// Alternating flushed/warm measurements over randomly chosen lines of the
// region. Fails rather than returning an overlapping calibration.
//
// When a second core is available, each sample's "hit" is measured the way
// the attack sees it: a helper thread pinned to another core loads the
// flushed line and this thread times the reload. With a single core the hit
// distribution degrades to same-core warm loads and no lower band cut is
// derived. victim_core -1 picks the first other online core; kSameCore
// forces the single-core measurement.
// threshold_override != 0 adopts that flat threshold (the classic 200-cycle
// choice) instead of deriving one, skipping the separation checks; the
// distributions are still measured and recorded.
inline constexpr int kSameCore = -2;
Calibration calibrate(const MappedFile& region, size_t samples, uint64_t seed,
                      int victim_core = -1, uint32_t threshold_override = 0);

// The shared math path: builds the histograms and the decision threshold
// from sample lists. Used directly by tests that inject synthetic latencies.
Calibration calibration_from_samples(std::span<const uint32_t> hit_samples,
                                     std::span<const uint32_t> miss_samples);

} // namespace tokleak::probe
