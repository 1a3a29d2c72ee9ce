// mvqc: dataset tooling, evaluation, synthetic harness and the fusion pipeline.
//
// Exit status: 0 on success, 1 on configuration or input errors (and on
// validation findings), 2 when a run logged protocol errors.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mvqc/detail/text.hpp"
#include "mvqc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mvqc;

namespace {

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("mvqc");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::info);
    if (const char* env = std::getenv("MVQC_LOG_LEVEL")) {
        const auto lvl = spdlog::level::from_str(env);
        // from_str maps unknown names to off; only honour that if asked for
        if (lvl != spdlog::level::off || std::string_view(env) == "off") {
            spdlog::set_level(lvl);
        } else {
            spdlog::warn("unknown MVQC_LOG_LEVEL '{}', keeping info", env);
        }
    }
}

std::vector<CameraId> parse_cameras(const std::vector<std::string>& names) {
    std::vector<CameraId> out;
    for (const auto& n : names) {
        const auto c = parse_camera(n);
        if (!c) throw ConfigError("unknown camera '" + n + "' (expected top, middle or bottom)");
        out.push_back(*c);
    }
    return out;
}

FusionPolicy policy_or_throw(const std::string& s) {
    const auto p = parse_policy(s);
    if (!p) throw ConfigError("unknown policy '" + s + "'");
    return *p;
}

void emit(const std::string& content, const std::string& target) {
    if (target == "-") {
        std::cout << content;
    } else {
        detail::write_file(target, content);
        spdlog::info("wrote {}", target);
    }
}

// ---------------------------------------------------------------------------

struct ValidateArgs {
    std::string root;
    std::string json_out;
};

int cmd_validate(const ValidateArgs& a) {
    const DatasetManifest m = build_manifest(a.root);
    for (const auto& w : m.warnings) spdlog::warn("{}", w);
    const ValidationReport report = validate(m, fs::path(a.root));
    const auto counts = report.camera_counts;
    std::cout << fmt::format("records: {} (top {}, middle {}, bottom {})\n", m.records.size(), counts[0], counts[1],
                             counts[2]);
    for (CameraId c : kAllCameras) {
        const auto& h = report.class_histograms[index_of(c)];
        std::cout << fmt::format("  {:<7}", to_string(c));
        for (std::size_t k = 0; k < h.size() && k < m.class_names.size(); ++k) {
            std::cout << fmt::format(" {}={}", m.class_names[k], h[k]);
        }
        std::cout << '\n';
    }
    std::cout << fmt::format("empty labels: {}\nissues: {}\n", report.empty_label_count, report.issues.size());
    for (const auto& i : report.issues) {
        std::cout << fmt::format("  {} {}: {}\n", to_string(i.kind), i.image_id, i.detail);
    }
    if (!a.json_out.empty()) emit(report_to_json(report, m), a.json_out);
    return report.clean() ? 0 : 1;
}

struct SplitArgs {
    std::string root;
    std::string out;
    std::uint64_t seed = 0;
    double train = 0.70, val = 0.15, test = 0.15;
};

int cmd_split(const SplitArgs& a) {
    DatasetManifest m = fs::is_regular_file(a.root) ? load_manifest(a.root) : build_manifest(a.root);
    for (const auto& w : m.warnings) spdlog::warn("{}", w);
    const SplitResult r = stratified_split(m, {a.train, a.val, a.test}, a.seed);
    const fs::path out(a.out);
    save_manifest(r.train, out / "train.json");
    save_manifest(r.val, out / "val.json");
    save_manifest(r.test, out / "test.json");
    for (const auto* part : {&r.train, &r.val, &r.test}) {
        const auto c = part->camera_counts();
        std::cout << fmt::format("{:<5} {:>6}  (top {}, middle {}, bottom {})\n", to_string(part->split),
                                 part->records.size(), c[0], c[1], c[2]);
    }
    return 0;
}

struct EvalArgs {
    std::string root;
    std::string detections;
    std::string fixture;
    bool table = false;
    std::string json_out;
    std::string csv_out;
};

int cmd_eval(const EvalArgs& a) {
    std::vector<EvalImage> images;
    std::vector<std::string> class_names = default_class_names();
    if (!a.fixture.empty()) {
        if (a.fixture != "exact-overlap") throw ConfigError("unknown fixture '" + a.fixture + "'");
        images = exact_overlap_fixture(1000, 999);
    } else {
        if (a.root.empty() || a.detections.empty()) throw ConfigError("eval needs --root and --detections");
        const DatasetManifest m = build_manifest(a.root);
        class_names = m.class_names;
        const ReplayBackend backend = ReplayBackend::from_directory(a.detections, class_names.size());
        for (const auto& rec : m.records) {
            EvalImage img;
            img.ground_truth = rec.instances;
            try {
                for (const auto& d : backend.detect({rec.image_id, rec.camera})) {
                    img.detections.push_back({d.bbox, d.confidence, d.class_id});
                }
            } catch (const LookupError&) {
                spdlog::warn("no detections for {}; scored as empty", rec.image_id);
            }
            images.push_back(std::move(img));
        }
    }
    EvalConfig cfg;
    cfg.class_names = class_names;
    const EvalReport r = evaluate(images, cfg);
    if (a.table || (a.json_out.empty() && a.csv_out.empty())) std::cout << render_table(r);
    if (!a.json_out.empty()) emit(eval_report_to_json(r), a.json_out);
    if (!a.csv_out.empty()) emit(eval_report_to_csv(r), a.csv_out);
    return 0;
}

struct SimulateArgs {
    std::string out;
    std::size_t assemblies = 100;
    std::uint64_t seed = 1;
    double loose_probability = 0.2;
    std::string policy = "DefectPriority";
    std::vector<std::string> withhold;
    std::size_t workers = 1;
    std::string profiles_dir;
    std::string registry;
};

int cmd_simulate(const SimulateArgs& a) {
    HarnessConfig hc;
    hc.assemblies = a.assemblies;
    hc.seed = a.seed;
    hc.loose_probability = a.loose_probability;
    if (!a.profiles_dir.empty()) {
        for (CameraId c : kAllCameras) {
            hc.profiles[index_of(c)] = load_profile(fs::path(a.profiles_dir) / (std::string(to_string(c)) + ".json"));
        }
    }
    const ComponentRegistry registry = a.registry.empty() ? default_station_registry() : load_registry(a.registry);
    const Harness h = make_harness(hc, registry);
    const SyntheticBackend backend(h.manifest, hc.profiles, a.seed);
    const fs::path root(a.out);
    write_harness(h, backend, root);
    spdlog::info("wrote {} assemblies to {}", h.assembly_ids.size(), root.string());

    RunConfig rc;
    rc.mode = RunMode::Batch;
    rc.dataset_root = root;
    rc.detections_root = root / "detections";
    rc.registry_file = root / "registry.json";
    rc.output_dir = root / "out";
    rc.process.policy = policy_or_throw(a.policy);
    rc.workers = a.workers;
    rc.withheld = parse_cameras(a.withhold);
    const RunOutcome outcome = run(rc);

    std::ifstream log(outcome.verdict_log);
    std::cout << render_log_summary(summarize_verdict_log(log));
    if (outcome.eval) std::cout << '\n' << render_table(*outcome.eval);
    return outcome.exit_code;
}

struct RunArgs {
    std::string registry;
    std::string detections;
    std::string events;
    int listen = -1;
    std::string out = "out";
    std::string policy = "DefectPriority";
    double timeout_ms = kDefaultTimeoutMs;
    double budget_ms = kDefaultBudgetMs;
    double assoc_iou = kDefaultAssocIou;
    std::vector<std::string> withhold;
    bool batch = false;
    std::string dataset;
    std::size_t workers = 1;
};

int cmd_run(const RunArgs& a) {
    RunConfig rc;
    rc.mode = a.batch ? RunMode::Batch : RunMode::Stream;
    rc.registry_file = a.registry;
    rc.detections_root = a.detections;
    rc.dataset_root = a.dataset;
    rc.output_dir = a.out;
    rc.process.policy = policy_or_throw(a.policy);
    rc.process.assoc_iou = a.assoc_iou;
    rc.timeout_ms = a.timeout_ms <= 0.0 ? kNoTimeout : a.timeout_ms;
    rc.budget_ms = a.budget_ms;
    rc.workers = a.workers;
    rc.withheld = parse_cameras(a.withhold);
    if (!a.events.empty()) rc.events_file = a.events;
    if (a.listen >= 0) {
        if (a.listen > 65535) throw ConfigError("--listen port out of range");
        rc.listen_port = static_cast<std::uint16_t>(a.listen);
    }
    const int sources = (!a.detections.empty() ? 1 : 0) + (rc.events_file ? 1 : 0) + (rc.listen_port ? 1 : 0);
    if (a.batch ? a.detections.empty() : sources != 1) {
        throw ConfigError(a.batch ? "batch runs need --detections"
                                  : "choose exactly one of --detections, --events, --listen");
    }

    const RunOutcome outcome = run(rc);
    std::cout << fmt::format("verdicts: {}\nprotocol errors: {}\nlog: {}\n", outcome.verdicts,
                             outcome.protocol_errors, outcome.verdict_log.string());
    if (outcome.latency) {
        const auto& l = *outcome.latency;
        std::cout << fmt::format("end-to-end p50 {:.3f} ms, p95 {:.3f} ms, max {:.3f} ms; over {:.1f} ms budget: {}\n",
                                 l.end_to_end.p50, l.end_to_end.p95, l.end_to_end.max, l.budget_ms,
                                 l.budget_violations);
    }
    if (outcome.eval) std::cout << render_table(*outcome.eval);
    return outcome.exit_code;
}

struct ReportArgs {
    std::string log;
    std::string latency;
};

int cmd_report(const ReportArgs& a) {
    std::ifstream in(a.log);
    if (!in) throw ConfigError("cannot read " + a.log);
    std::cout << render_log_summary(summarize_verdict_log(in));
    if (!a.latency.empty()) std::cout << '\n' << detail::read_file(a.latency);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();

    CLI::App app{"Multi-view fastener inspection: datasets, evaluation and verdict fusion"};
    app.set_config("--config", "", "TOML/INI file supplying option defaults (flags override it)");
    app.require_subcommand(1);

    ValidateArgs va;
    auto* validate_cmd = app.add_subcommand("validate", "Check a dataset directory (images/, labels/)");
    validate_cmd->add_option("--root", va.root, "Dataset root")->required()->check(CLI::ExistingDirectory);
    validate_cmd->add_option("--json", va.json_out, "Also write the report as JSON ('-' for stdout)");

    SplitArgs sa;
    auto* split_cmd = app.add_subcommand("split", "Per-camera stratified train/val/test split");
    split_cmd->add_option("--root", sa.root, "Dataset root or manifest JSON")->required()->check(CLI::ExistingPath);
    split_cmd->add_option("--seed", sa.seed, "Shuffle seed")->required();
    split_cmd->add_option("--out", sa.out, "Directory for train.json, val.json, test.json")->required();
    split_cmd->add_option("--train", sa.train, "Train fraction")->capture_default_str();
    split_cmd->add_option("--val", sa.val, "Validation fraction")->capture_default_str();
    split_cmd->add_option("--test", sa.test, "Test fraction")->capture_default_str();

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "Score stored detections against labels");
    eval_cmd->add_option("--root", ea.root, "Dataset root with labels/");
    eval_cmd->add_option("--detections", ea.detections, "Directory of detections/<camera>/<stem>.txt");
    eval_cmd->add_option("--fixture", ea.fixture, "Built-in fixture instead of a dataset")
        ->check(CLI::IsMember({"exact-overlap"}));
    eval_cmd->add_flag("--table", ea.table, "Print the summary table");
    eval_cmd->add_option("--json", ea.json_out, "Write the report as JSON ('-' for stdout)");
    eval_cmd->add_option("--csv", ea.csv_out, "Write class,threshold,ap rows ('-' for stdout)");

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Generate the synthetic three-camera harness and run it");
    sim_cmd->add_option("--out", sim.out, "Output directory")->required();
    sim_cmd->add_option("--assemblies", sim.assemblies, "Number of assemblies")->capture_default_str();
    sim_cmd->add_option("--seed", sim.seed, "Seed")->capture_default_str();
    sim_cmd->add_option("--loose-probability", sim.loose_probability, "Chance each fastener is loose")
        ->capture_default_str();
    sim_cmd->add_option("--policy", sim.policy, "DefectPriority, MajorityVote or ConfidenceWeighted")
        ->capture_default_str();
    sim_cmd->add_option("--withhold", sim.withhold, "Cameras to drop from fusion");
    sim_cmd->add_option("--workers", sim.workers, "Worker threads")->capture_default_str();
    sim_cmd->add_option("--profiles", sim.profiles_dir, "Directory with top.json, middle.json, bottom.json");
    sim_cmd->add_option("--registry", sim.registry, "Registry JSON (default: built-in station)");

    RunArgs ra;
    auto* run_cmd = app.add_subcommand("run", "Fuse camera detections into assembly verdicts");
    run_cmd->add_option("--registry", ra.registry, "Component registry JSON")->required();
    run_cmd->add_option("--detections", ra.detections, "Replay detections/<camera>/<assembly>.txt");
    run_cmd->add_option("--events", ra.events, "JSON-lines camera events ('-' for stdin)");
    run_cmd->add_option("--listen", ra.listen, "Accept JSON-lines events on this TCP port (0 = any)");
    run_cmd->add_option("--out", ra.out, "Output directory")->capture_default_str();
    run_cmd->add_option("--policy", ra.policy, "DefectPriority, MajorityVote or ConfidenceWeighted")
        ->capture_default_str();
    run_cmd->add_option("--timeout-ms", ra.timeout_ms, "Bundle timeout; 0 waits forever")->capture_default_str();
    run_cmd->add_option("--budget-ms", ra.budget_ms, "Latency budget per assembly")->capture_default_str();
    run_cmd->add_option("--assoc-iou", ra.assoc_iou, "IoU needed to tie a detection to a component")
        ->capture_default_str();
    run_cmd->add_option("--withhold", ra.withhold, "Cameras to ignore");
    run_cmd->add_flag("--batch", ra.batch, "Process stored detections without the synchronizer");
    run_cmd->add_option("--dataset", ra.dataset, "Batch only: dataset root to evaluate against");
    run_cmd->add_option("--workers", ra.workers, "Batch only: worker threads")->capture_default_str();

    ReportArgs rep;
    auto* report_cmd = app.add_subcommand("report", "Summarize a verdict log");
    report_cmd->add_option("--log", rep.log, "verdicts.jsonl")->required()->check(CLI::ExistingFile);
    report_cmd->add_option("--latency", rep.latency, "latency.json to print alongside")
        ->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*validate_cmd) return cmd_validate(va);
        if (*split_cmd) return cmd_split(sa);
        if (*eval_cmd) return cmd_eval(ea);
        if (*sim_cmd) return cmd_simulate(sim);
        if (*run_cmd) return cmd_run(ra);
        if (*report_cmd) return cmd_report(rep);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 1;
}
