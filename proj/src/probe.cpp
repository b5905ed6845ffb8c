#include "tokleak/probe.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <ctime>
#include <optional>
#include <thread>

#include "tokleak/errors.hpp"
#include "tokleak/rng.hpp"

#if defined(__x86_64__) || defined(__i386__)
#include <cpuid.h>
#include <x86intrin.h>
#define TOKLEAK_X86 1
#endif

#if defined(__linux__)
#include <sched.h>
#include <unistd.h>
#endif

namespace tokleak::probe {

uint32_t Histogram::quantile(double p) const {
    if (count_ == 0) fail(errc::invalid_argument, "quantile of empty histogram");
    const uint64_t rank = uint64_t(std::ceil(p * double(count_)));
    const uint64_t target = rank == 0 ? 1 : rank;
    uint64_t cum = 0;
    for (uint32_t v = 0; v < bins_.size(); ++v) {
        cum += bins_[v];
        if (cum >= target) return v;
    }
    return kMaxCycles;
}

double Histogram::mean() const {
    if (count_ == 0) return 0.0;
    double sum = 0.0;
    for (uint32_t v = 0; v < bins_.size(); ++v) {
        sum += double(v) * double(bins_[v]);
    }
    return sum / double(count_);
}

double Histogram::stddev() const {
    if (count_ < 2) return 0.0;
    const double m = mean();
    double ss = 0.0;
    for (uint32_t v = 0; v < bins_.size(); ++v) {
        const double d = double(v) - m;
        ss += d * d * double(bins_[v]);
    }
    return std::sqrt(ss / double(count_ - 1));
}

bool platform_supported() {
#if defined(TOKLEAK_X86)
    unsigned eax = 0, ebx = 0, ecx = 0, edx = 0;
    if (!__get_cpuid(1, &eax, &ebx, &ecx, &edx)) return false;
    const bool has_tsc = (edx & (1u << 4)) != 0;
    const bool has_clflush = (edx & (1u << 19)) != 0;
    return has_tsc && has_clflush;
#else
    return false;
#endif
}

std::string platform_report() {
#if defined(TOKLEAK_X86)
    return platform_supported() ? "x86 with rdtsc + clflush"
                                : "x86 without rdtsc/clflush support";
#else
    return "non-x86 build, no cycle counter or line flush available";
#endif
}

#if defined(TOKLEAK_X86)

uint64_t cycle_timestamp() {
    _mm_lfence();
    const uint64_t t = __rdtsc();
    _mm_lfence();
    return t;
}

TimedLoad timed_load_raw(const volatile void* p) {
    _mm_mfence();
    _mm_lfence();
    const uint64_t t0 = __rdtsc();
    _mm_lfence();
    (void)*reinterpret_cast<const volatile uint8_t*>(p);
    _mm_lfence();
    const uint64_t t1 = __rdtsc();
    return {t1 - t0, t1};
}

void flush_raw(const volatile void* p) {
    _mm_clflush(const_cast<const void*>(p));
    _mm_mfence();
}

#else

uint64_t cycle_timestamp() {
    fail(errc::unsupported_platform, platform_report());
}

TimedLoad timed_load_raw(const volatile void*) {
    fail(errc::unsupported_platform, platform_report());
}

void flush_raw(const volatile void*) {
    fail(errc::unsupported_platform, platform_report());
}

#endif

namespace {

void require_mapped(const MappedFile& file, uint64_t offset) {
    if (!file.contains(offset)) {
        fail(errc::unmapped_address,
             "offset " + std::to_string(offset) + " outside mapping of size " +
                 std::to_string(file.size()));
    }
}

void require_platform() {
    if (!platform_supported()) {
        fail(errc::unsupported_platform, platform_report());
    }
}

} // namespace

uint64_t timed_load(const MappedFile& file, uint64_t offset) {
    require_mapped(file, offset);
    require_platform();
    return timed_load_raw(file.u8(offset)).cycles;
}

void flush_line(const MappedFile& file, uint64_t offset) {
    require_mapped(file, offset);
    require_platform();
    flush_raw(file.u8(offset));
}

double measure_cycles_per_us() {
    require_platform();
    timespec a{}, b{};
    clock_gettime(CLOCK_MONOTONIC, &a);
    const uint64_t t0 = cycle_timestamp();
    // ~20 ms busy window; long enough for a stable rate estimate.
    for (;;) {
        clock_gettime(CLOCK_MONOTONIC, &b);
        const double ns = double(b.tv_sec - a.tv_sec) * 1e9 + double(b.tv_nsec - a.tv_nsec);
        if (ns >= 20e6) break;
    }
    const uint64_t t1 = cycle_timestamp();
    const double ns = double(b.tv_sec - a.tv_sec) * 1e9 + double(b.tv_nsec - a.tv_nsec);
    return double(t1 - t0) / (ns / 1e3);
}

void pin_to_core(int core) {
#if defined(__linux__)
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(core, &set);
    if (sched_setaffinity(0, sizeof(set), &set) != 0) {
        fail(errc::invalid_argument, "cannot pin to core " + std::to_string(core));
    }
#else
    (void)core;
    fail(errc::unsupported_platform, "core pinning requires linux");
#endif
}

namespace {

Calibration calibration_stats(std::span<const uint32_t> hit_samples,
                              std::span<const uint32_t> miss_samples) {
    if (hit_samples.empty() || miss_samples.empty()) {
        fail(errc::invalid_argument, "calibration needs both hit and miss samples");
    }
    Calibration cal;
    for (uint32_t v : hit_samples) cal.hit_latencies.add(v);
    for (uint32_t v : miss_samples) cal.miss_latencies.add(v);
    cal.hit_median = cal.hit_latencies.median();
    cal.miss_median = cal.miss_latencies.median();
    cal.hit_p99 = cal.hit_latencies.quantile(0.99);
    cal.hit_stddev = cal.hit_latencies.stddev();
    return cal;
}

} // namespace

Calibration calibration_from_samples(std::span<const uint32_t> hit_samples,
                                     std::span<const uint32_t> miss_samples) {
    Calibration cal = calibration_stats(hit_samples, miss_samples);

    if (cal.hit_median >= cal.miss_median) {
        fail(errc::distributions_overlap,
             "hit median " + std::to_string(cal.hit_median) +
                 " not below miss median " + std::to_string(cal.miss_median));
    }
    const uint32_t miss_p1 = cal.miss_latencies.quantile(0.01);
    if (cal.hit_p99 >= miss_p1) {
        fail(errc::distributions_overlap,
             "hit p99 " + std::to_string(cal.hit_p99) + " >= miss p1 " +
                 std::to_string(miss_p1));
    }

    cal.threshold = uint32_t(std::ceil(double(cal.hit_p99) + cal.hit_stddev));
    if (!(cal.threshold > cal.hit_median && cal.threshold < cal.miss_median)) {
        fail(errc::distributions_overlap,
             "threshold " + std::to_string(cal.threshold) +
                 " does not fall strictly between the medians");
    }
    return cal;
}

struct CrossCoreWarmer::Impl {
    static inline const volatile uint8_t* const kStop =
        reinterpret_cast<const volatile uint8_t*>(uintptr_t(1));
    std::atomic<const volatile uint8_t*> request{nullptr};
    std::thread thread;
};

CrossCoreWarmer::CrossCoreWarmer(int core) : impl_(new Impl) {
    Impl* impl = impl_.get();
    impl->thread = std::thread([impl, core] {
#if defined(__linux__)
        if (core >= 0) {
            cpu_set_t set;
            CPU_ZERO(&set);
            CPU_SET(core, &set);
            (void)sched_setaffinity(0, sizeof(set), &set);
        }
#endif
        for (;;) {
            const volatile uint8_t* p = impl->request.load(std::memory_order_acquire);
            if (p == Impl::kStop) break;
            if (p != nullptr) {
                (void)*p;
                impl->request.store(nullptr, std::memory_order_release);
            }
        }
    });
}

CrossCoreWarmer::~CrossCoreWarmer() {
    impl_->request.store(Impl::kStop, std::memory_order_release);
    impl_->thread.join();
}

void CrossCoreWarmer::warm(const volatile uint8_t* p) {
    impl_->request.store(p, std::memory_order_release);
    while (impl_->request.load(std::memory_order_acquire) != nullptr) {
    }
}

int pick_other_core() {
#if defined(__linux__)
    // Online cores, not the current affinity mask: the measuring thread is
    // usually already pinned by the time this runs.
    const long ncpu = sysconf(_SC_NPROCESSORS_ONLN);
    if (ncpu <= 1) return -1;
    const int self = sched_getcpu();
    for (int cpu = 0; cpu < int(ncpu); ++cpu) {
        if (cpu != self) return cpu;
    }
#endif
    return -1;
}

Calibration calibrate(const MappedFile& region, size_t samples, uint64_t seed,
                      int victim_core, uint32_t threshold_override) {
    require_platform();
    if (samples < 1000) {
        fail(errc::invalid_argument, "need at least 1000 calibration samples");
    }
    constexpr uint64_t kLine = 64;
    const uint64_t lines = region.size() / kLine;
    if (lines < 64) {
        fail(errc::region_too_small,
             "region spans " + std::to_string(lines) + " cache lines, need >= 64");
    }

    if (victim_core == -1) victim_core = pick_other_core();
    const bool cross_core = victim_core >= 0;

    CounterRng rng(seed, /*stream=*/0x5eed);
    std::vector<uint32_t> hits, self_hits, misses;
    hits.reserve(samples);
    self_hits.reserve(samples);
    misses.reserve(samples);

    if (cross_core) {
        CrossCoreWarmer helper(victim_core);
        // A sample is valid only if the warm-up handshake ran undisturbed:
        // a preemption or hypervisor exit inside the round trip leaves a
        // latency that measures scheduling, not the cache. The cap is set
        // from the first batch's median round trip.
        uint64_t handshake_cap = UINT64_MAX;
        std::vector<uint64_t> first_batch;
        const size_t attempts_cap = samples * 4;
        size_t attempts = 0;
        while (hits.size() < samples && attempts++ < attempts_cap) {
            const uint64_t offset = rng.bounded(lines) * kLine;
            const volatile uint8_t* p = region.u8(offset);
            flush_raw(p);
            const uint64_t h0 = cycle_timestamp();
            helper.warm(p); // the victim re-caches the flushed line
            const uint64_t handshake = cycle_timestamp() - h0;
            const uint32_t reload = uint32_t(timed_load_raw(p).cycles);
            const uint32_t self_warm = uint32_t(timed_load_raw(p).cycles);
            flush_raw(p);
            const uint32_t miss = uint32_t(timed_load_raw(p).cycles);
            flush_raw(p);

            if (handshake_cap == UINT64_MAX) {
                first_batch.push_back(handshake);
                if (first_batch.size() == 1000) {
                    std::vector<uint64_t> sorted = first_batch;
                    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2,
                                     sorted.end());
                    handshake_cap = 4 * sorted[sorted.size() / 2];
                }
            } else if (handshake > handshake_cap) {
                continue; // disturbed interval, redraw
            }
            hits.push_back(reload);
            self_hits.push_back(self_warm);
            misses.push_back(miss);
        }
        if (hits.size() < samples) {
            fail(errc::distributions_overlap,
                 "environment too noisy: most calibration rounds were preempted");
        }
    } else {
        for (size_t i = 0; i < samples; ++i) {
            const uint64_t offset = rng.bounded(lines) * kLine;
            const volatile uint8_t* p = region.u8(offset);
            flush_raw(p);
            misses.push_back(uint32_t(timed_load_raw(p).cycles));
            hits.push_back(uint32_t(timed_load_raw(p).cycles));
            flush_raw(p);
        }
    }

    Calibration cal;
    if (threshold_override) {
        cal = calibration_stats(hits, misses);
        cal.threshold = threshold_override;
    } else {
        cal = calibration_from_samples(hits, misses);
    }
    cal.cross_core = cross_core;
    cal.victim_core = cross_core ? victim_core : -1;
    if (cross_core) {
        for (uint32_t v : self_hits) cal.self_hit_latencies.add(v);
        // Lower hit bound: everything at or below the band of lines this
        // core warmed itself is discounted. Only usable when that band sits
        // clearly under the genuine cross-core hit band.
        const uint32_t self_p99 = cal.self_hit_latencies.quantile(0.99);
        const uint32_t cut =
            uint32_t(std::ceil(double(self_p99) + cal.self_hit_latencies.stddev()));
        if (cut < cal.hit_latencies.quantile(0.01)) {
            cal.hit_low_cut = cut;
        }
    }
    cal.cycles_per_us = measure_cycles_per_us();
    return cal;
}

} // namespace tokleak::probe
