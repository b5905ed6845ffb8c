#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace tokleak {

// Philox4x32-10 counter-based generator. Outputs depend only on (key, counter),
// so seeds are portable across implementations and draws indexed by a counter
// never shift when neighbouring draws are skipped.
struct Philox4x32 {
    static constexpr uint32_t kMul0 = 0xD2511F53u;
    static constexpr uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr uint32_t kWeyl1 = 0xBB67AE85u;

    static std::array<uint32_t, 4> block(std::array<uint32_t, 4> ctr,
                                         std::array<uint32_t, 2> key) {
        for (int round = 0; round < 10; ++round) {
            const uint64_t p0 = uint64_t(kMul0) * ctr[0];
            const uint64_t p1 = uint64_t(kMul1) * ctr[2];
            const uint32_t hi0 = uint32_t(p0 >> 32), lo0 = uint32_t(p0);
            const uint32_t hi1 = uint32_t(p1 >> 32), lo1 = uint32_t(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        return ctr;
    }
};

// A single Philox stream: key = seed, counter = (stream, index). `at(i)`-style
// access gives random words for a fixed index; the sequential interface keeps
// a cursor for callers that just want draw-after-draw.
class CounterRng {
public:
    CounterRng(uint64_t seed, uint64_t stream = 0)
        : key_{uint32_t(seed), uint32_t(seed >> 32)}, stream_(stream) {}

    // 64 random bits for a fixed counter index; pure function of (seed, stream, index).
    uint64_t word_at(uint64_t index) const {
        const std::array<uint32_t, 4> ctr = {uint32_t(index), uint32_t(index >> 32),
                                             uint32_t(stream_), uint32_t(stream_ >> 32)};
        const auto out = Philox4x32::block(ctr, key_);
        return (uint64_t(out[1]) << 32) | out[0];
    }

    uint64_t next_u64() { return word_at(cursor_++); }

    // Uniform in [0, 1) with 53 random bits.
    double next_unit() { return double(next_u64() >> 11) * 0x1.0p-53; }
    double unit_at(uint64_t index) const { return double(word_at(index) >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Modulo bias is < n / 2^64, irrelevant at our ranges.
    uint64_t bounded(uint64_t n) { return n ? next_u64() % n : 0; }

    // Exponential with the given mean; 0 when mean <= 0.
    double exponential(double mean) {
        if (mean <= 0.0) return 0.0;
        return -mean * std::log1p(-next_unit());
    }
    double exponential_at(uint64_t index, double mean) const {
        if (mean <= 0.0) return 0.0;
        return -mean * std::log1p(-unit_at(index));
    }

    // Standard Box-Muller; consumes two draws.
    double normal(double mean, double stddev) {
        double u1 = next_unit();
        double u2 = next_unit();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double mag = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * mag * std::cos(6.283185307179586 * u2);
    }

    uint64_t cursor() const { return cursor_; }
    void seek(uint64_t cursor) { cursor_ = cursor; }

private:
    std::array<uint32_t, 2> key_;
    uint64_t stream_ = 0;
    uint64_t cursor_ = 0;
};

} // namespace tokleak
