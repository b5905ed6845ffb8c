// tokleak: study how GGUF-backed LLM token generation leaks through shared
// CPU caches. Parses model files to locate per-token embedding rows, runs
// calibrated Flush+Reload monitoring against a replayed victim, and explores
// the leakage/overhead/set-size trade-offs with a deterministic simulator
// and Monte-Carlo planners.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tokleak/errors.hpp"
#include "tokleak/gguf.hpp"
#include "tokleak/json_io.hpp"
#include "tokleak/mapped_file.hpp"
#include "tokleak/monitor.hpp"
#include "tokleak/planner.hpp"
#include "tokleak/probe.hpp"
#include "tokleak/reconstruct.hpp"
#include "tokleak/replay.hpp"
#include "tokleak/sim.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

using namespace tokleak;
using nlohmann::json;

// ---- run manifests ---------------------------------------------------------

// Every run records what it did: resolved config, content digests of the
// inputs, seed, and output paths. No timestamps, so identical runs write
// identical manifests.
class Manifest {
public:
    Manifest(std::string subcommand, std::string out_dir)
        : out_dir_(std::move(out_dir)) {
        doc_["tool"] = "tokleak";
        doc_["version"] = kVersion;
        doc_["subcommand"] = std::move(subcommand);
        doc_["config"] = json::object();
        doc_["inputs"] = json::object();
        doc_["outputs"] = json::array();
    }

    template <typename T>
    void config(const std::string& key, const T& value) {
        doc_["config"][key] = value;
    }
    void input(const std::string& path) {
        char digest[32];
        std::snprintf(digest, sizeof(digest), "fnv1a64:%016llx",
                      (unsigned long long)io::file_digest(path));
        doc_["inputs"][path] = digest;
    }
    void output(const std::string& path) { doc_["outputs"].push_back(path); }

    void write(const std::string& name) const {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir_);
        const std::string path = (fs::path(out_dir_) / (name + ".manifest.json")).string();
        io::write_file(path, doc_.dump(2) + "\n");
    }

private:
    std::string out_dir_;
    json doc_;
};

// ---- small helpers ---------------------------------------------------------

std::vector<uint32_t> parse_id_list(const std::string& text) {
    std::string data = text;
    if (!text.empty() && text[0] == '@') {
        data = io::read_file(text.substr(1));
    }
    std::vector<uint32_t> ids;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            ids.push_back(uint32_t(std::stoul(cur)));
            cur.clear();
        }
    };
    for (char c : data) {
        if (std::isdigit((unsigned char)c)) {
            cur.push_back(c);
        } else {
            flush();
        }
    }
    flush();
    return ids;
}

template <typename T>
std::vector<T> parse_number_list(const std::string& text) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(T(std::stod(item)));
    }
    return out;
}

struct ModelContext {
    MappedFile file;
    gguf::GgufModel model;
    gguf::VocabTable vocab;
    gguf::EmbeddingLayout layout;
};

ModelContext open_model(const std::string& path, const std::string& tensor,
                        const std::string& vocab_key) {
    ModelContext ctx;
    ctx.file = MappedFile::open(path);
    ctx.model = gguf::parse_gguf(ctx.file.bytes());
    ctx.vocab = gguf::extract_vocab(ctx.model, vocab_key);
    ctx.layout = gguf::locate_embedding_for_vocab(ctx.model, tensor, ctx.vocab);
    return ctx;
}

void require_hardware() {
    if (!probe::platform_supported()) {
        fail(errc::unsupported_platform,
             "this subcommand needs hardware timing support (" +
                 probe::platform_report() + ")");
    }
}

void apply_pinning(std::optional<int> core, bool force) {
    if (core) {
        probe::pin_to_core(*core);
    } else if (!force) {
        fail(errc::invalid_argument,
             "hardware runs must be pinned: pass --core N (or --force to run unpinned)");
    }
}

gguf::VocabTable resolve_vocab(const std::string& vocab_path,
                               const std::string& model_path,
                               const std::string& vocab_key,
                               bool fixture_vocab,
                               Manifest& manifest) {
    if (fixture_vocab) {
        manifest.config("vocab", "builtin-uuid-fixture");
        return planner::make_uuid_fixture_vocab();
    }
    if (!vocab_path.empty()) {
        manifest.input(vocab_path);
        return planner::load_vocab_json(vocab_path);
    }
    if (!model_path.empty()) {
        manifest.input(model_path);
        const MappedFile file = MappedFile::open(model_path);
        return gguf::extract_vocab(gguf::parse_gguf(file.bytes()), vocab_key);
    }
    fail(errc::invalid_argument, "need --vocab, --file, or --fixture-vocab");
}

void emit(const std::string& out_path, const std::string& content, Manifest& manifest) {
    if (out_path.empty()) {
        std::cout << content;
    } else {
        io::write_file(out_path, content);
        manifest.output(out_path);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cache side-channel toolkit for GGUF embedding layers"};
    app.require_subcommand(1);
    app.fallthrough(); // parent options may appear after the subcommand
    app.set_version_flag("--version", kVersion);

    const char* env_model = std::getenv("TOKLEAK_MODEL");
    const std::string default_model = env_model ? env_model : "";

    std::string out_dir = ".";
    app.add_option("--out-dir", out_dir, "directory for manifests and default outputs")
        ->capture_default_str();

    // ---- inspect ----
    auto* cmd_inspect = app.add_subcommand("inspect", "parse a GGUF file and report layout + vocab");
    std::string in_file = default_model;
    std::string in_tensor{gguf::kDefaultEmbeddingTensor};
    std::string in_vocab_key{gguf::kDefaultVocabKey};
    cmd_inspect->add_option("--file", in_file, "GGUF model file")->required(default_model.empty());
    cmd_inspect->add_option("--tensor", in_tensor, "embedding tensor name");
    cmd_inspect->add_option("--vocab-key", in_vocab_key, "vocab metadata key");

    // ---- calibrate ----
    auto* cmd_cal = app.add_subcommand("calibrate", "measure hit/miss latencies and derive the threshold");
    std::string cal_file = default_model;
    uint64_t cal_samples = 20000;
    uint64_t cal_seed = 1;
    uint32_t cal_override = 0;
    std::optional<int> cal_core;
    bool cal_force = false;
    std::string cal_out = "calibration.json";
    cmd_cal->add_option("--file", cal_file)->required(default_model.empty());
    int cal_victim_core = -1;
    cmd_cal->add_option("--samples", cal_samples, "sample pairs (>= 1000)");
    cmd_cal->add_option("--seed", cal_seed);
    cmd_cal->add_option("--threshold-override", cal_override,
                        "force this threshold instead of the derived one");
    cmd_cal->add_option("--core", cal_core, "pin to this core");
    cmd_cal->add_option("--victim-core", cal_victim_core,
                        "core for the warm-up helper (-1 = auto)");
    cmd_cal->add_flag("--force", cal_force, "allow running unpinned");
    cmd_cal->add_option("--out", cal_out, "calibration JSON path");

    // ---- replay ----
    auto* cmd_replay = app.add_subcommand("replay", "victim stand-in: touch embedding rows per a token trace");
    std::string rp_file = default_model, rp_trace;
    std::string rp_tensor{gguf::kDefaultEmbeddingTensor}, rp_vocab_key{gguf::kDefaultVocabKey};
    uint64_t rp_loop = 1;
    std::optional<int> rp_core;
    bool rp_force = false;
    cmd_replay->add_option("--file", rp_file)->required(default_model.empty());
    cmd_replay->add_option("--trace", rp_trace, "JSON-lines trace")->required();
    cmd_replay->add_option("--loop", rp_loop, "trace repetitions");
    cmd_replay->add_option("--tensor", rp_tensor);
    cmd_replay->add_option("--vocab-key", rp_vocab_key);
    cmd_replay->add_option("--core", rp_core);
    cmd_replay->add_flag("--force", rp_force);

    // ---- monitor ----
    auto* cmd_mon = app.add_subcommand("monitor", "round-robin Flush+Reload over a token set");
    std::string mon_file = default_model, mon_tokens, mon_calibration, mon_out = "hits.jsonl";
    std::string mon_tensor{gguf::kDefaultEmbeddingTensor}, mon_vocab_key{gguf::kDefaultVocabKey};
    uint32_t mon_threshold = 0;
    double mon_duration = 1.0, mon_overhead = 0.0;
    uint64_t mon_capacity = 1u << 20;
    std::optional<int> mon_core;
    bool mon_force = false;
    cmd_mon->add_option("--file", mon_file)->required(default_model.empty());
    cmd_mon->add_option("--tokens", mon_tokens, "ids: \"1,2,3\" or @file")->required();
    int mon_min_latency = -1;
    cmd_mon->add_option("--calibration", mon_calibration, "calibration JSON from `calibrate`");
    cmd_mon->add_option("--threshold", mon_threshold, "cycles; overrides calibration");
    cmd_mon->add_option("--min-latency", mon_min_latency,
                        "hit band lower edge; overrides calibration (0 disables)");
    cmd_mon->add_option("--duration", mon_duration, "seconds");
    cmd_mon->add_option("--overhead-us", mon_overhead, "injected spin per hit");
    cmd_mon->add_option("--buffer-capacity", mon_capacity);
    uint64_t mon_lines_per_token = 1;
    cmd_mon->add_option("--lines-per-token", mon_lines_per_token,
                        "probe this many lines of each token's row (multiplies revisit)");
    cmd_mon->add_option("--tensor", mon_tensor);
    cmd_mon->add_option("--vocab-key", mon_vocab_key);
    cmd_mon->add_option("--core", mon_core);
    cmd_mon->add_flag("--force", mon_force);
    cmd_mon->add_option("--out", mon_out, "hit records (JSON lines)");

    // ---- measure-loop-cost ----
    auto* cmd_cost = app.add_subcommand("measure-loop-cost", "mean cycles per flush+reload entry");
    std::string cost_file = default_model;
    uint64_t cost_size = 200, cost_iters = 100000;
    std::optional<int> cost_core;
    bool cost_force = false;
    cmd_cost->add_option("--file", cost_file)->required(default_model.empty());
    cmd_cost->add_option("--set-size", cost_size);
    cmd_cost->add_option("--iterations", cost_iters);
    cmd_cost->add_option("--core", cost_core);
    cmd_cost->add_flag("--force", cost_force);

    // ---- simulate ----
    auto* cmd_sim = app.add_subcommand("simulate", "deterministic victim/cache/attacker model");
    cmd_sim->require_subcommand(1);
    std::string sim_scenario, sim_out;
    uint64_t sim_seed = 1, sim_trials = 100;
    auto add_sim_common = [&](CLI::App* sub) {
        sub->add_option("--scenario", sim_scenario, "scenario JSON")->required();
        sub->add_option("--seed", sim_seed);
        sub->add_option("--trials", sim_trials);
        sub->add_option("--out", sim_out, "output path (default stdout)");
    };
    auto* sim_run = cmd_sim->add_subcommand("run", "one simulated monitoring run");
    add_sim_common(sim_run);
    auto* sim_ov = cmd_sim->add_subcommand("sweep-overhead", "leakage vs per-hit overhead");
    add_sim_common(sim_ov);
    std::string sim_grid = "0,100,200,300,400,500,600,700,800";
    sim_ov->add_option("--grid", sim_grid, "overhead grid in us");
    auto* sim_ss = cmd_sim->add_subcommand("sweep-setsize", "leakage vs monitored-set size");
    add_sim_common(sim_ss);
    std::string sim_sizes = "25,50,100,150,200,250,300,400,600,1000";
    sim_ss->add_option("--sizes", sim_sizes, "set sizes, ascending");
    auto* sim_dc = cmd_sim->add_subcommand("decoys", "leakage vs decoy access rate");
    add_sim_common(sim_dc);
    std::string sim_rates = "0,0.01,0.05,0.1,0.5,1,5";
    sim_dc->add_option("--rates", sim_rates, "decoy accesses per us");

    // ---- plan ----
    auto* cmd_plan = app.add_subcommand("plan", "choose what to monitor");
    cmd_plan->require_subcommand(1);
    std::string plan_vocab, plan_file = default_model, plan_out;
    std::string plan_vocab_key{gguf::kDefaultVocabKey};
    bool plan_fixture = false;
    uint64_t plan_seed = 1, plan_trials = 10000;
    auto add_plan_common = [&](CLI::App* sub) {
        sub->add_option("--vocab", plan_vocab, "standalone vocab JSON");
        sub->add_option("--file", plan_file, "GGUF model to pull the vocab from");
        sub->add_option("--vocab-key", plan_vocab_key);
        sub->add_flag("--fixture-vocab", plan_fixture, "use the builtin synthetic key vocab");
        sub->add_option("--seed", plan_seed);
        sub->add_option("--out", plan_out, "output path (default stdout)");
    };
    auto* plan_uuid = cmd_plan->add_subcommand("uuid", "key-capture coverage vs monitored-set size");
    add_plan_common(plan_uuid);
    plan_uuid->add_option("--trials", plan_trials);
    std::string plan_sizes = "50,100,250,500,1250";
    plan_uuid->add_option("--sizes", plan_sizes);
    std::string plan_template{planner::kUuidV4Template};
    plan_uuid->add_option("--template", plan_template, "key template (x=hex, y=variant)");
    std::string plan_emit_set;
    uint64_t plan_emit_size = 0;
    plan_uuid->add_option("--emit-set", plan_emit_set,
                          "write the top-N token ids here (for monitor --tokens @file)");
    plan_uuid->add_option("--emit-set-size", plan_emit_size,
                          "N for --emit-set (default: largest of --sizes)");

    auto* plan_english = cmd_plan->add_subcommand("english", "corpus-frequency monitor sets");
    add_plan_common(plan_english);
    std::string plan_corpus, plan_response;
    plan_english->add_option("--corpus", plan_corpus, "text corpus")->required();
    plan_english->add_option("--response", plan_response, "response text to score (default: corpus)");
    std::string plan_en_sizes = "50,100,150,250,400,650,1000";
    plan_english->add_option("--sizes", plan_en_sizes);
    plan_english->add_option("--emit-set", plan_emit_set,
                             "write the top-N token ids here (for monitor --tokens @file)");
    plan_english->add_option("--emit-set-size", plan_emit_size,
                             "N for --emit-set (default: largest of --sizes)");

    auto* plan_rot = cmd_plan->add_subcommand("rotation", "multi-exposure key capture schedule");
    add_plan_common(plan_rot);
    uint64_t rot_set_size = 250, rot_trials = 2000, rot_budget = 1000;
    double rot_detect = 1.0;
    plan_rot->add_option("--set-size", rot_set_size);
    plan_rot->add_option("--trials", rot_trials);
    plan_rot->add_option("--detection-prob", rot_detect);
    plan_rot->add_option("--max-interactions", rot_budget);
    plan_rot->add_option("--template", plan_template);

    auto* plan_vocab_cmd = cmd_plan->add_subcommand("vocab", "extract or synthesize a vocab JSON");
    add_plan_common(plan_vocab_cmd);

    // ---- analyze ----
    auto* cmd_an = app.add_subcommand("analyze", "collapse hit records and score against ground truth");
    std::string an_hits, an_truth, an_monitored, an_vocab;
    double an_window = 0.0;
    bool an_full_stream = false;
    cmd_an->add_option("--hits", an_hits, "JSON-lines hit records or detections")->required();
    cmd_an->add_option("--truth", an_truth, "ground-truth trace (JSON lines with token_id)");
    cmd_an->add_option("--monitored", an_monitored, "monitored ids: \"1,2,3\" or @file");
    cmd_an->add_option("--window", an_window, "debounce window (same unit as timestamps)");
    cmd_an->add_option("--vocab", an_vocab, "vocab JSON for text rendering");
    cmd_an->add_flag("--full-stream", an_full_stream, "divide recall by the whole stream");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e); // prints the synopsis to stderr
        return 2;
    }

    try {
        // ---- inspect ----
        if (cmd_inspect->parsed()) {
            Manifest manifest("inspect", out_dir);
            manifest.input(in_file);
            manifest.config("file", in_file);
            manifest.config("tensor", in_tensor);
            manifest.config("vocab_key", in_vocab_key);
            const ModelContext ctx = open_model(in_file, in_tensor, in_vocab_key);
            std::cout << io::model_summary_json(ctx.model, &ctx.layout, &ctx.vocab);
            manifest.write("inspect");
            return 0;
        }

        // ---- calibrate ----
        if (cmd_cal->parsed()) {
            require_hardware();
            apply_pinning(cal_core, cal_force);
            Manifest manifest("calibrate", out_dir);
            manifest.input(cal_file);
            manifest.config("samples", cal_samples);
            manifest.config("seed", cal_seed);
            manifest.config("threshold_override", cal_override);
            const MappedFile file = MappedFile::open(cal_file);
            const probe::Calibration cal = probe::calibrate(
                file, cal_samples, cal_seed, cal_victim_core, cal_override);
            io::write_file(cal_out, io::calibration_to_json(cal));
            manifest.output(cal_out);
            std::cout << "hit band [" << cal.hit_low_cut << ", " << cal.threshold
                      << ") cycles (hit median " << cal.hit_median << ", miss median "
                      << cal.miss_median << ", "
                      << (cal.cross_core ? "cross-core" : "same-core") << "), tsc "
                      << io::format_double(cal.cycles_per_us) << " cycles/us\n";
            manifest.write("calibrate");
            return 0;
        }

        // ---- replay ----
        if (cmd_replay->parsed()) {
            require_hardware();
            apply_pinning(rp_core, rp_force);
            Manifest manifest("replay", out_dir);
            manifest.input(rp_file);
            manifest.input(rp_trace);
            manifest.config("loop", rp_loop);
            const ModelContext ctx = open_model(rp_file, rp_tensor, rp_vocab_key);
            replay::TokenTrace trace = replay::load_trace_file(rp_trace);
            trace.loop_count = rp_loop;
            const replay::ReplayReport report = replay::replay(trace, ctx.layout, ctx.file);
            std::cout << io::replay_report_json(report);
            manifest.write("replay");
            return 0;
        }

        // ---- monitor ----
        if (cmd_mon->parsed()) {
            require_hardware();
            apply_pinning(mon_core, mon_force);
            Manifest manifest("monitor", out_dir);
            manifest.input(mon_file);
            const ModelContext ctx = open_model(mon_file, mon_tensor, mon_vocab_key);

            monitor::MonitorConfig config;
            if (!mon_calibration.empty()) {
                manifest.input(mon_calibration);
                const probe::Calibration cal = io::load_calibration(mon_calibration);
                config.threshold_cycles = cal.threshold;
                config.min_latency_cycles = cal.hit_low_cut;
                config.cycles_per_us = cal.cycles_per_us;
            }
            if (mon_threshold) config.threshold_cycles = mon_threshold;
            if (mon_min_latency >= 0) config.min_latency_cycles = uint32_t(mon_min_latency);
            if (config.cycles_per_us <= 0.0) config.cycles_per_us = probe::measure_cycles_per_us();
            config.duration_seconds = mon_duration;
            config.injected_overhead_us = mon_overhead;
            config.buffer_capacity = mon_capacity;
            manifest.config("threshold", config.threshold_cycles);
            manifest.config("min_latency", config.min_latency_cycles);
            manifest.config("duration_seconds", mon_duration);
            manifest.config("overhead_us", mon_overhead);

            const auto ids = parse_id_list(mon_tokens);
            manifest.config("tokens", ids.size());
            manifest.config("lines_per_token", mon_lines_per_token);
            const monitor::MonitorSet set = monitor::make_monitor_set(
                ctx.layout, ids, 64, size_t(mon_lines_per_token));
            const monitor::MonitorReport report = monitor::run_round_robin(set, config, ctx.file);
            io::write_file(mon_out, io::hits_to_jsonl(report.hits));
            manifest.output(mon_out);
            std::cout << io::monitor_summary_json(report);
            manifest.write("monitor");
            return 0;
        }

        // ---- measure-loop-cost ----
        if (cmd_cost->parsed()) {
            require_hardware();
            apply_pinning(cost_core, cost_force);
            Manifest manifest("measure-loop-cost", out_dir);
            manifest.input(cost_file);
            manifest.config("set_size", cost_size);
            manifest.config("iterations", cost_iters);
            const MappedFile file = MappedFile::open(cost_file);
            const double cost = monitor::measure_loop_cost_cycles(cost_size, file, cost_iters);
            json j;
            j["set_size"] = cost_size;
            j["mean_entry_cost_cycles"] = cost;
            j["revisit_period_cycles"] = cost * double(cost_size);
            std::cout << j.dump(2) << "\n";
            manifest.write("measure-loop-cost");
            return 0;
        }

        // ---- simulate ----
        if (cmd_sim->parsed()) {
            const sim::Scenario scenario = sim::load_scenario(sim_scenario);
            Manifest manifest("simulate", out_dir);
            manifest.input(sim_scenario);
            manifest.config("seed", sim_seed);
            manifest.config("trials", sim_trials);

            if (sim_run->parsed()) {
                manifest.config("mode", "run");
                const sim::VictimModel victim = sim::materialize_victim(scenario, sim_seed);
                const auto set = sim::materialize_set(scenario.set);
                const sim::SimResult result =
                    sim::simulate_run(victim, set, scenario.cache, scenario.overhead_us, sim_seed);
                std::cout << io::sim_result_json(result);
                emit(sim_out, io::sim_detections_jsonl(result), manifest);
            } else if (sim_ov->parsed()) {
                manifest.config("mode", "sweep-overhead");
                manifest.config("grid", sim_grid);
                const auto grid = parse_number_list<double>(sim_grid);
                const auto curve = sim::sweep_overhead(scenario, grid, sim_trials, sim_seed);
                emit(sim_out, io::sweep_csv(curve, "overhead_us"), manifest);
            } else if (sim_ss->parsed()) {
                manifest.config("mode", "sweep-setsize");
                manifest.config("sizes", sim_sizes);
                const auto sizes = parse_number_list<uint64_t>(sim_sizes);
                const auto curve = sim::sweep_set_size(scenario, sizes, sim_trials, sim_seed);
                emit(sim_out, io::sweep_csv(curve, "set_size"), manifest);
            } else {
                manifest.config("mode", "decoys");
                manifest.config("rates", sim_rates);
                const auto rates = parse_number_list<double>(sim_rates);
                const auto curve = sim::evaluate_decoys(scenario, rates, sim_trials, sim_seed);
                emit(sim_out, io::sweep_csv(curve, "decoy_rate", "victim_slowdown_proxy"), manifest);
            }
            manifest.write("simulate");
            return 0;
        }

        // ---- plan ----
        if (cmd_plan->parsed()) {
            Manifest manifest("plan", out_dir);
            manifest.config("seed", plan_seed);
            const gguf::VocabTable vocab =
                resolve_vocab(plan_vocab, plan_file, plan_vocab_key, plan_fixture, manifest);

            if (plan_uuid->parsed()) {
                manifest.config("mode", "uuid");
                manifest.config("trials", plan_trials);
                manifest.config("template", plan_template);
                const auto sizes = parse_number_list<uint64_t>(plan_sizes);
                const planner::CoverageCurve curve =
                    planner::uuid_coverage(vocab, sizes, plan_trials, plan_seed, plan_template);
                std::vector<std::pair<uint64_t, std::pair<double, double>>> rows;
                for (const auto& p : curve.points) {
                    rows.push_back({p.set_size, {p.mean_coverage, p.full_capture_prob}});
                }
                emit(plan_out, io::coverage_csv(rows), manifest);
                if (!plan_emit_set.empty()) {
                    auto ranking = planner::key_token_ranking(vocab, plan_trials,
                                                              plan_seed, plan_template);
                    uint64_t n = plan_emit_size;
                    if (!n && !sizes.empty()) n = *std::max_element(sizes.begin(), sizes.end());
                    if (ranking.size() > n) ranking.resize(n);
                    io::write_file(plan_emit_set, planner::format_id_set(ranking));
                    manifest.output(plan_emit_set);
                }
            } else if (plan_english->parsed()) {
                manifest.config("mode", "english");
                manifest.input(plan_corpus);
                const std::string corpus_text = io::read_file(plan_corpus);
                const auto corpus_ids = planner::normalize_and_tokenize(vocab, corpus_text);
                const auto table =
                    planner::build_frequency_set(corpus_ids, vocab.size());
                std::vector<uint32_t> response_ids = corpus_ids;
                if (!plan_response.empty()) {
                    manifest.input(plan_response);
                    response_ids =
                        planner::normalize_and_tokenize(vocab, io::read_file(plan_response));
                }
                const auto en_sizes = parse_number_list<uint64_t>(plan_en_sizes);
                std::string csv = "set_size,single_shot_leak\n";
                for (uint64_t n : en_sizes) {
                    const size_t usable = std::min<size_t>(n, table.ranked.size());
                    csv += std::to_string(n) + "," +
                           io::format_double(planner::expected_single_shot_leak(
                               table, usable, response_ids)) +
                           "\n";
                }
                emit(plan_out, csv, manifest);
                if (!plan_emit_set.empty()) {
                    uint64_t n = plan_emit_size;
                    if (!n && !en_sizes.empty()) {
                        n = *std::max_element(en_sizes.begin(), en_sizes.end());
                    }
                    std::vector<uint32_t> ids;
                    for (size_t i = 0; i < table.ranked.size() && i < n; ++i) {
                        ids.push_back(table.ranked[i].first);
                    }
                    io::write_file(plan_emit_set, planner::format_id_set(ids));
                    manifest.output(plan_emit_set);
                }
            } else if (plan_rot->parsed()) {
                manifest.config("mode", "rotation");
                manifest.config("set_size", rot_set_size);
                manifest.config("trials", rot_trials);
                manifest.config("detection_prob", rot_detect);
                const planner::RotationPlan plan = planner::plan_rotation(
                    vocab, rot_set_size, rot_trials, plan_seed, rot_detect, rot_budget,
                    plan_template);
                json j;
                j["set_size"] = rot_set_size;
                j["interactions_to_50pct"] = plan.interactions_50;
                j["interactions_to_80pct"] = plan.interactions_80;
                j["interactions_to_100pct"] = plan.interactions_100;
                j["budget_exhausted"] = plan.budget_exhausted;
                j["rounds_preview"] = plan.rounds.size();
                emit(plan_out, j.dump(2) + "\n", manifest);
            } else if (plan_vocab_cmd->parsed()) {
                manifest.config("mode", "vocab");
                if (plan_out.empty()) fail(errc::invalid_argument, "plan vocab needs --out");
                planner::save_vocab_json(vocab, plan_out);
                manifest.output(plan_out);
                std::cout << "wrote " << vocab.size() << " tokens to " << plan_out << "\n";
            }
            manifest.write("plan");
            return 0;
        }

        // ---- analyze ----
        if (cmd_an->parsed()) {
            Manifest manifest("analyze", out_dir);
            manifest.input(an_hits);
            manifest.config("window", an_window);
            manifest.config("full_stream", an_full_stream);
            const auto events = io::load_events_jsonl(an_hits);
            const auto collapsed = reconstruct::collapse_hits(events, an_window);

            gguf::VocabTable vocab;
            const bool have_vocab = !an_vocab.empty();
            if (have_vocab) {
                manifest.input(an_vocab);
                vocab = planner::load_vocab_json(an_vocab);
            }

            if (an_truth.empty()) {
                json j;
                j["events_in"] = events.size();
                j["events_after_collapse"] = collapsed.size();
                json stream = json::array();
                for (const auto& e : collapsed) {
                    if (have_vocab && e.token_id < vocab.tokens.size()) {
                        stream.push_back(vocab.tokens[e.token_id]);
                    } else {
                        stream.push_back(e.token_id);
                    }
                }
                j["recovered_stream"] = stream;
                std::cout << j.dump(2) << "\n";
            } else {
                manifest.input(an_truth);
                const replay::TokenTrace truth_trace = replay::load_trace_file(an_truth);
                std::vector<uint32_t> truth;
                for (const auto& ev : truth_trace.events) truth.push_back(ev.token_id);
                std::unordered_set<uint32_t> monitored;
                if (!an_monitored.empty()) {
                    for (uint32_t id : parse_id_list(an_monitored)) monitored.insert(id);
                } else {
                    for (const auto& e : events) monitored.insert(e.token_id);
                }
                const reconstruct::LeakReport report =
                    reconstruct::score_leak(collapsed, truth, monitored,
                                            have_vocab ? &vocab : nullptr, an_full_stream);
                std::cout << io::leak_report_json(report);
            }
            manifest.write("analyze");
            return 0;
        }
    } catch (const error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
