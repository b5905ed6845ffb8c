#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tokleak/gguf.hpp"
#include "tokleak/mapped_file.hpp"

namespace tokleak::replay {

struct TraceEvent {
    double delay_us; // microseconds since the previous event
    uint32_t token_id;
};

struct TokenTrace {
    std::vector<TraceEvent> events;
    uint64_t loop_count = 1;
};

struct ReplayReport {
    uint64_t events_executed = 0;
    uint64_t loops = 0;
    double wall_start_us = 0.0; // CLOCK_MONOTONIC
    double wall_end_us = 0.0;
    double duration_us() const { return wall_end_us - wall_start_us; }
};

// JSON-lines, one {"delay_us": ..., "token_id": ...} object per line.
TokenTrace load_trace_jsonl(std::istream& in);
TokenTrace load_trace_file(const std::string& path);

// Stands in for the inference process: after each event's delay, performs a
// real load of that token's designated probe line. Every token id is
// validated against the layout before the first access.
ReplayReport replay(const TokenTrace& trace,
                    const gguf::EmbeddingLayout& layout,
                    const MappedFile& file);

} // namespace tokleak::replay
