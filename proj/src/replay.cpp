#include "tokleak/replay.hpp"

#include <ctime>
#include <fstream>
#include <istream>
#include <string>

#include <json.hpp>

#include "tokleak/errors.hpp"
#include "tokleak/probe.hpp"

namespace tokleak::replay {

namespace {

double monotonic_us() {
    timespec ts{};
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return double(ts.tv_sec) * 1e6 + double(ts.tv_nsec) / 1e3;
}

// Spin below 100 us so short inter-token gaps stay realistic; sleep above.
void wait_us(double us) {
    if (us <= 0.0) return;
    if (us < 100.0) {
        const double until = monotonic_us() + us;
        while (monotonic_us() < until) {
        }
    } else {
        timespec ts{};
        ts.tv_sec = time_t(us / 1e6);
        ts.tv_nsec = long((us - double(ts.tv_sec) * 1e6) * 1e3);
        nanosleep(&ts, nullptr);
    }
}

} // namespace

TokenTrace load_trace_jsonl(std::istream& in) {
    TokenTrace trace;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(errc::io_error,
                 "trace line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.contains("delay_us") || !j.contains("token_id")) {
            fail(errc::io_error, "trace line " + std::to_string(lineno) +
                                     ": need delay_us and token_id");
        }
        const double delay = j["delay_us"].get<double>();
        if (delay < 0.0) {
            fail(errc::invalid_argument,
                 "trace line " + std::to_string(lineno) + ": negative delay");
        }
        trace.events.push_back({delay, j["token_id"].get<uint32_t>()});
    }
    return trace;
}

TokenTrace load_trace_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(errc::io_error, "cannot open trace '" + path + "'");
    return load_trace_jsonl(in);
}

ReplayReport replay(const TokenTrace& trace,
                    const gguf::EmbeddingLayout& layout,
                    const MappedFile& file) {
    if (layout.layer_offset + layout.layer_size > file.size()) {
        fail(errc::file_mismatch,
             "layout extends past the mapped file; wrong model for this layout?");
    }
    // Validate and resolve all probe lines before the first access.
    std::vector<const volatile uint8_t*> addrs;
    addrs.reserve(trace.events.size());
    for (const auto& ev : trace.events) {
        if (ev.token_id >= layout.num_tokens) {
            fail(errc::trace_token_out_of_range,
                 "trace references token " + std::to_string(ev.token_id) +
                     " but the layout has " + std::to_string(layout.num_tokens));
        }
        const auto lines = gguf::cacheline_targets(layout, ev.token_id);
        addrs.push_back(file.u8(lines.front()));
    }

    ReplayReport report;
    report.wall_start_us = monotonic_us();
    for (uint64_t loop = 0; loop < trace.loop_count; ++loop) {
        for (size_t i = 0; i < trace.events.size(); ++i) {
            wait_us(trace.events[i].delay_us);
            (void)*addrs[i];
            ++report.events_executed;
        }
        ++report.loops;
    }
    report.wall_end_us = monotonic_us();
    return report;
}

} // namespace tokleak::replay
