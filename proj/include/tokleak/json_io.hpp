#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tokleak/gguf.hpp"
#include "tokleak/monitor.hpp"
#include "tokleak/probe.hpp"
#include "tokleak/reconstruct.hpp"
#include "tokleak/replay.hpp"
#include "tokleak/sim.hpp"

namespace tokleak::io {

// Deterministic double rendering (%.10g) so identical runs produce
// byte-identical reports.
std::string format_double(double v);

std::string calibration_to_json(const probe::Calibration& cal);
probe::Calibration calibration_from_json(const std::string& text);
probe::Calibration load_calibration(const std::string& path);

std::string hits_to_jsonl(std::span<const monitor::HitRecord> hits);
std::vector<reconstruct::TokenEvent> load_events_jsonl(const std::string& path);

std::string monitor_summary_json(const monitor::MonitorReport& report);
std::string replay_report_json(const replay::ReplayReport& report);

std::string model_summary_json(const gguf::GgufModel& model,
                               const gguf::EmbeddingLayout* layout,
                               const gguf::VocabTable* vocab);

std::string sim_result_json(const sim::SimResult& result);
std::string sim_detections_jsonl(const sim::SimResult& result);

// CSV: one row per grid point, stable column order and formatting.
std::string sweep_csv(std::span<const sim::SweepPoint> points,
                      const std::string& x_name,
                      const std::string& extra_name = "");

std::string coverage_csv(const std::vector<std::pair<uint64_t, std::pair<double, double>>>& rows);

std::string leak_report_json(const reconstruct::LeakReport& report);

uint64_t fnv1a64(std::span<const std::byte> bytes);
uint64_t file_digest(const std::string& path);

void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

} // namespace tokleak::io
