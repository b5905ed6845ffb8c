#include "tokleak/json_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tokleak/errors.hpp"

namespace tokleak::io {

using nlohmann::json;

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

namespace {

json histogram_to_json(const probe::Histogram& h) {
    // Sparse encoding: [cycles, count] pairs for non-empty bins.
    json bins = json::array();
    for (uint32_t v = 0; v < h.bins().size(); ++v) {
        if (h.bins()[v]) bins.push_back({v, h.bins()[v]});
    }
    return bins;
}

void histogram_from_json(const json& bins, probe::Histogram& h) {
    for (const auto& pair : bins) {
        const uint32_t v = pair.at(0).get<uint32_t>();
        const uint64_t n = pair.at(1).get<uint64_t>();
        for (uint64_t i = 0; i < n; ++i) h.add(v);
    }
}

} // namespace

std::string calibration_to_json(const probe::Calibration& cal) {
    json j;
    j["threshold"] = cal.threshold;
    j["hit_low_cut"] = cal.hit_low_cut;
    j["hit_p99"] = cal.hit_p99;
    j["hit_stddev"] = cal.hit_stddev;
    j["hit_median"] = cal.hit_median;
    j["miss_median"] = cal.miss_median;
    j["cycles_per_us"] = cal.cycles_per_us;
    j["cross_core"] = cal.cross_core;
    j["victim_core"] = cal.victim_core;
    j["hit_bins"] = histogram_to_json(cal.hit_latencies);
    j["miss_bins"] = histogram_to_json(cal.miss_latencies);
    j["self_hit_bins"] = histogram_to_json(cal.self_hit_latencies);
    return j.dump(2) + "\n";
}

probe::Calibration calibration_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(errc::io_error, "calibration parse error: " + std::string(e.what()));
    }
    probe::Calibration cal;
    cal.threshold = j.at("threshold").get<uint32_t>();
    cal.hit_low_cut = j.value("hit_low_cut", 0u);
    cal.hit_p99 = j.value("hit_p99", 0u);
    cal.hit_stddev = j.value("hit_stddev", 0.0);
    cal.hit_median = j.value("hit_median", 0u);
    cal.miss_median = j.value("miss_median", 0u);
    cal.cycles_per_us = j.value("cycles_per_us", 0.0);
    cal.cross_core = j.value("cross_core", false);
    cal.victim_core = j.value("victim_core", -1);
    if (j.contains("hit_bins")) histogram_from_json(j["hit_bins"], cal.hit_latencies);
    if (j.contains("miss_bins")) histogram_from_json(j["miss_bins"], cal.miss_latencies);
    if (j.contains("self_hit_bins")) {
        histogram_from_json(j["self_hit_bins"], cal.self_hit_latencies);
    }
    return cal;
}

probe::Calibration load_calibration(const std::string& path) {
    return calibration_from_json(read_file(path));
}

std::string hits_to_jsonl(std::span<const monitor::HitRecord> hits) {
    std::string out;
    for (const auto& h : hits) {
        json j;
        j["timestamp"] = h.timestamp;
        j["token_id"] = h.token_id;
        j["latency"] = h.latency;
        j["generation"] = h.generation;
        out += j.dump();
        out += "\n";
    }
    return out;
}

std::vector<reconstruct::TokenEvent> load_events_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(errc::io_error, "cannot open events '" + path + "'");
    std::vector<reconstruct::TokenEvent> events;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            fail(errc::io_error,
                 "events line " + std::to_string(lineno) + ": " + e.what());
        }
        reconstruct::TokenEvent ev{};
        if (j.contains("timestamp")) {
            ev.time = j["timestamp"].get<double>();
        } else if (j.contains("time_us")) {
            ev.time = j["time_us"].get<double>();
        } else {
            fail(errc::io_error, "events line " + std::to_string(lineno) +
                                     ": need timestamp or time_us");
        }
        ev.token_id = j.at("token_id").get<uint32_t>();
        events.push_back(ev);
    }
    return events;
}

std::string monitor_summary_json(const monitor::MonitorReport& report) {
    json j;
    j["hits"] = report.hits.size();
    j["overflow"] = report.overflow;
    j["probes"] = report.probes;
    j["loop_passes"] = report.loop_passes;
    j["mean_entry_cost_cycles"] = report.mean_entry_cost_cycles;
    j["revisit_period_cycles"] = report.revisit_period_cycles;
    j["allocations_in_loop"] = report.allocations_in_loop;
    j["start_tsc"] = report.start_tsc;
    j["end_tsc"] = report.end_tsc;
    return j.dump(2) + "\n";
}

std::string replay_report_json(const replay::ReplayReport& report) {
    json j;
    j["events_executed"] = report.events_executed;
    j["loops"] = report.loops;
    j["wall_start_us"] = report.wall_start_us;
    j["wall_end_us"] = report.wall_end_us;
    j["duration_us"] = report.duration_us();
    return j.dump(2) + "\n";
}

std::string model_summary_json(const gguf::GgufModel& model,
                               const gguf::EmbeddingLayout* layout,
                               const gguf::VocabTable* vocab) {
    json j;
    j["version"] = model.version;
    j["tensor_count"] = model.tensor_count;
    j["alignment"] = model.alignment;
    j["data_base"] = model.data_base;
    j["metadata_keys"] = json::array();
    for (const auto& [k, v] : model.metadata) {
        (void)v;
        j["metadata_keys"].push_back(k);
    }
    j["tensors"] = json::array();
    for (const auto& t : model.tensors) {
        json tj;
        tj["name"] = t.name;
        tj["dims"] = t.dims;
        tj["dtype_code"] = t.dtype_code;
        tj["rel_offset"] = t.rel_offset;
        const auto bytes = gguf::tensor_byte_size(t);
        if (bytes) tj["byte_size"] = *bytes;
        j["tensors"].push_back(tj);
    }
    if (layout) {
        j["embedding"] = {
            {"layer_offset", layout->layer_offset},
            {"layer_size", layout->layer_size},
            {"num_tokens", layout->num_tokens},
            {"token_stride", layout->token_stride},
        };
    }
    if (vocab) {
        j["vocab_size"] = vocab->size();
    }
    return j.dump(2) + "\n";
}

std::string sim_result_json(const sim::SimResult& result) {
    json j;
    j["ground_truth_hits"] = result.ground_truth_hits;
    j["true_positives"] = result.true_positives;
    j["missed"] = result.missed;
    j["false_positives"] = result.false_positives;
    j["stream_length"] = result.stream_length;
    j["leak_fraction"] = result.leak_fraction;
    j["detections"] = result.detected.size();
    return j.dump(2) + "\n";
}

std::string sim_detections_jsonl(const sim::SimResult& result) {
    std::string out;
    for (const auto& d : result.detected) {
        json j;
        j["time_us"] = d.time_us;
        j["token_id"] = d.token_id;
        j["true_positive"] = d.true_positive;
        out += j.dump();
        out += "\n";
    }
    return out;
}

std::string sweep_csv(std::span<const sim::SweepPoint> points,
                      const std::string& x_name,
                      const std::string& extra_name) {
    std::string out = x_name + ",mean_leak_fraction,stddev";
    if (!extra_name.empty()) out += "," + extra_name;
    out += "\n";
    for (const auto& p : points) {
        out += format_double(p.x) + "," + format_double(p.mean_leak) + "," +
               format_double(p.stddev);
        if (!extra_name.empty()) out += "," + format_double(p.extra);
        out += "\n";
    }
    return out;
}

std::string coverage_csv(
    const std::vector<std::pair<uint64_t, std::pair<double, double>>>& rows) {
    std::string out = "set_size,mean_coverage,full_capture_prob\n";
    for (const auto& [n, metrics] : rows) {
        out += std::to_string(n) + "," + format_double(metrics.first) + "," +
               format_double(metrics.second) + "\n";
    }
    return out;
}

std::string leak_report_json(const reconstruct::LeakReport& report) {
    json j;
    j["precision"] = report.precision;
    j["recall"] = report.recall;
    j["matched"] = report.matched;
    j["truth_occurrences"] = report.truth_occurrences;
    j["gap_markers"] = report.gap_markers;
    j["recovered_events"] = report.recovered.size();
    j["rendered"] = report.rendered;
    return j.dump(2) + "\n";
}

uint64_t fnv1a64(std::span<const std::byte> bytes) {
    uint64_t hash = 0xcbf29ce484222325ull;
    for (std::byte b : bytes) {
        hash ^= uint64_t(b);
        hash *= 0x100000001b3ull;
    }
    return hash;
}

uint64_t file_digest(const std::string& path) {
    const std::string content = read_file(path);
    return fnv1a64(std::as_bytes(std::span(content.data(), content.size())));
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(errc::io_error, "cannot write '" + path + "'");
    out << content;
    if (!out) fail(errc::io_error, "short write to '" + path + "'");
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::io_error, "cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace tokleak::io
