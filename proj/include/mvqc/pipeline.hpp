#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvqc/dataset.hpp"
#include "mvqc/detector.hpp"
#include "mvqc/evaluation.hpp"
#include "mvqc/fusion.hpp"

namespace mvqc {

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// synchronization

/// One camera's report for one assembly.
struct CameraEvent {
    CameraId camera = CameraId::Top;
    std::string assembly_id;
    std::vector<Detection> detections;
    double detect_ms = 0.0;  // time the producer spent obtaining the detections
};

struct FrameBundle {
    std::string assembly_id;
    std::array<std::optional<std::vector<Detection>>, kCameraCount> slots;
    std::array<double, kCameraCount> detect_ms{};
    double first_arrival_ms = 0.0;
    double emitted_ms = 0.0;
    bool complete = false;
    bool poisoned = false;
    std::string error;  // set when poisoned

    std::vector<CameraId> missing() const;
};

inline constexpr double kDefaultTimeoutMs = 500.0;
inline constexpr double kNoTimeout = std::numeric_limits<double>::infinity();

struct ProtocolIssue {
    std::string assembly_id;
    CameraId camera;
    std::string detail;
};

/// Gathers per-camera events into one bundle per assembly. Single-threaded;
/// callers supply the clock so behaviour is reproducible.
///
/// A bundle is emitted once, either when all three cameras have reported or
/// when `timeout_ms` has passed since its first event. A repeated
/// (camera, assembly) event poisons a pending bundle, which is then emitted
/// immediately. Events for an assembly that was already emitted are dropped
/// and recorded as issues.
class Synchronizer {
public:
    explicit Synchronizer(double timeout_ms = kDefaultTimeoutMs);

    /// Bundles completed, poisoned, or timed out by this event.
    std::vector<FrameBundle> offer(CameraEvent event, double now_ms);
    /// Bundles whose timeout has expired at `now_ms`.
    std::vector<FrameBundle> poll(double now_ms);
    /// End of input: emit every pending bundle as timed out.
    std::vector<FrameBundle> flush(double now_ms);

    std::size_t pending() const noexcept { return pending_.size(); }
    std::size_t emitted() const noexcept { return emitted_.size(); }
    /// Earliest pending deadline, if any.
    std::optional<double> next_deadline() const;
    const std::vector<ProtocolIssue>& issues() const noexcept { return issues_; }

private:
    FrameBundle take(const std::string& id, double now_ms);

    double timeout_ms_;
    std::map<std::string, FrameBundle> pending_;
    std::deque<std::string> arrival_order_;  // pending ids by first arrival
    std::map<std::string, std::array<bool, kCameraCount>> emitted_;
    std::vector<ProtocolIssue> issues_;
};

// ---------------------------------------------------------------------------
// latency

struct StageTimings {
    double detect_ms = 0.0;
    double associate_ms = 0.0;
    double fuse_ms = 0.0;
    double log_ms = 0.0;
    double end_to_end_ms = 0.0;  // sum of the stages above
    double sync_wait_ms = 0.0;   // first arrival to emission; not part of end-to-end
};

struct StageStats {
    double p50 = 0.0;
    double p95 = 0.0;
    double max = 0.0;
};

struct LatencySummary {
    std::size_t samples = 0;
    StageStats detect, associate, fuse, log, end_to_end, sync_wait;
    double budget_ms = 9.0;
    std::size_t budget_violations = 0;  // end-to-end samples above budget
};

inline constexpr double kDefaultBudgetMs = 9.0;

/// Nearest-rank percentile (p in (0, 100]) of a non-empty sample.
double nearest_rank(std::vector<double> samples, double p);

std::optional<LatencySummary> latency_report(std::span<const StageTimings> timings,
                                             double budget_ms = kDefaultBudgetMs);
std::string latency_to_json(const LatencySummary& s);

// ---------------------------------------------------------------------------
// verdict log

inline constexpr int kVerdictLogFormatVersion = 1;

/// Append-only JSON-lines writer; the first record is a header.
class VerdictLog {
public:
    VerdictLog(std::ostream& out, FusionPolicy policy);

    void write(const AssemblyVerdict& v);
    void write_protocol_error(const std::string& assembly_id, std::optional<CameraId> camera,
                              const std::string& detail);

private:
    std::ostream& out_;
};

struct VerdictLogSummary {
    std::size_t verdicts = 0;
    std::map<std::string, std::size_t> by_overall;
    std::size_t protocol_errors = 0;
    std::size_t defective_components = 0;
    std::set<std::string> duplicate_assemblies;
    std::string policy;
};

/// Reads a verdict log; throws ConfigError on a missing or mismatched header.
VerdictLogSummary summarize_verdict_log(std::istream& in);
std::string render_log_summary(const VerdictLogSummary& s);

/// Verdict records of a log, sorted, for order-insensitive comparison.
std::vector<std::string> verdict_records(std::istream& in);

// ---------------------------------------------------------------------------
// processing

struct ProcessOptions {
    FusionPolicy policy = FusionPolicy::DefectPriority;
    double assoc_iou = kDefaultAssocIou;
};

/// Associate each reported camera and fuse; stage durations go to `timings`.
AssemblyVerdict process_bundle(const FrameBundle& bundle, const ComponentRegistry& registry,
                               const ProcessOptions& options, StageTimings* timings = nullptr);

// ---------------------------------------------------------------------------
// synthetic three-camera harness

/// Four fasteners, each visible in all three cameras at camera-specific ROIs.
ComponentRegistry default_station_registry();

struct HarnessConfig {
    std::size_t assemblies = 100;
    double loose_probability = 0.2;
    std::uint64_t seed = 1;
    std::array<DetectorProfile, kCameraCount> profiles{
        preset_profile(CameraId::Top), preset_profile(CameraId::Middle), preset_profile(CameraId::Bottom)};
};

struct Harness {
    ComponentRegistry registry;
    std::vector<std::string> assembly_ids;
    DatasetManifest manifest;  // one image per camera per assembly, id "<camera>/<assembly>"
    /// True state per assembly per component (registry order).
    std::vector<std::vector<ViewState>> truth;
};

std::string assembly_image_id(CameraId camera, const std::string& assembly_id);

Harness make_harness(const HarnessConfig& config, const ComponentRegistry& registry);

/// Writes images/ (empty placeholders), labels/, detections/ and registry.json.
void write_harness(const Harness& harness, const DetectorBackend& backend, const std::filesystem::path& root);

/// A set of exact-overlap detections: `total_gt` single-class instances,
/// the first `true_positives` detected at high confidence, no false positives.
std::vector<EvalImage> exact_overlap_fixture(std::size_t total_gt, std::size_t true_positives,
                                             std::size_t per_image = 10);

// ---------------------------------------------------------------------------
// runners

struct BatchResult {
    std::vector<AssemblyVerdict> verdicts;  // assembly order
    std::vector<StageTimings> timings;
};

/// Detect, associate and fuse every assembly. Cameras in `withheld` and images
/// unknown to the backend are treated as missing views. Output does not
/// depend on `workers`.
BatchResult run_batch(std::span<const std::string> assembly_ids, const DetectorBackend& backend,
                      const ComponentRegistry& registry, const ProcessOptions& options,
                      std::span<const CameraId> withheld = {}, std::size_t workers = 1);

/// Blocking hand-off between producer threads and the single consumer.
template <class T>
class EventQueue {
public:
    void push(T item) {
        {
            std::lock_guard lock(mutex_);
            items_.push_back(std::move(item));
        }
        cv_.notify_one();
    }
    /// Marks one producer as finished.
    void producer_done() {
        {
            std::lock_guard lock(mutex_);
            ++done_;
        }
        cv_.notify_all();
    }
    void set_producers(std::size_t n) {
        std::lock_guard lock(mutex_);
        producers_ = n;
    }
    enum class Status { Item, Timeout, Closed };
    /// Wait up to `wait_ms` for an item.
    Status pop(T& out, double wait_ms) {
        std::unique_lock lock(mutex_);
        const auto ready = [&] { return !items_.empty() || done_ >= producers_; };
        if (wait_ms == kNoTimeout) {
            cv_.wait(lock, ready);
        } else if (!cv_.wait_for(lock, std::chrono::duration<double, std::milli>(std::max(0.0, wait_ms)), ready)) {
            return Status::Timeout;
        }
        if (items_.empty()) return Status::Closed;
        out = std::move(items_.front());
        items_.pop_front();
        return Status::Item;
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<T> items_;
    std::size_t producers_ = 0;
    std::size_t done_ = 0;
};

struct StreamOptions {
    ProcessOptions process;
    double timeout_ms = kDefaultTimeoutMs;
    std::vector<CameraId> withheld;
};

struct StreamResult {
    std::size_t verdicts = 0;
    std::size_t bundles = 0;
    std::size_t degraded = 0;
    std::size_t protocol_errors = 0;
    std::vector<StageTimings> timings;
    double wall_ms = 0.0;
};

/// Replay `detections/<camera>/<assembly>.txt` files with one producer thread
/// per camera feeding a single synchronizer/consumer.
StreamResult run_stream_replay(const std::filesystem::path& detections_root,
                               std::span<const std::string> assembly_ids, const ComponentRegistry& registry,
                               const StreamOptions& options, VerdictLog& log);

/// Read JSON-lines camera events from `in` (one reader thread).
StreamResult run_stream_events(std::istream& in, const ComponentRegistry& registry,
                               const StreamOptions& options, VerdictLog& log);

/// Accept one TCP connection on `port` (0 picks a free port) and read
/// JSON-lines events from it until the peer closes. `on_listening` receives
/// the bound port once the socket accepts connections.
StreamResult run_stream_socket(std::uint16_t port, const ComponentRegistry& registry,
                               const StreamOptions& options, VerdictLog& log,
                               const std::function<void(std::uint16_t)>& on_listening = {});

/// Parse one JSON event line:
/// {"camera":"top","assembly_id":"A1","detections":[{"class_id":0,"cx":..,"cy":..,"w":..,"h":..,"confidence":..}]}
CameraEvent parse_event_line(std::string_view line);
std::string event_to_json_line(const CameraEvent& e);

/// Sorted union of detection file stems across camera directories.
std::vector<std::string> discover_assemblies(const std::filesystem::path& detections_root);

// ---------------------------------------------------------------------------
// top-level run

enum class RunMode { Batch, Stream };

struct RunConfig {
    RunMode mode = RunMode::Batch;
    std::filesystem::path dataset_root;     // batch: labels for evaluation (optional)
    std::filesystem::path detections_root;  // detections/<camera>/<assembly>.txt
    std::filesystem::path registry_file;
    std::filesystem::path output_dir;
    std::optional<std::filesystem::path> events_file;  // stream: JSON lines ("-" = stdin)
    std::optional<std::uint16_t> listen_port;          // stream: TCP JSON lines
    ProcessOptions process;
    double timeout_ms = kDefaultTimeoutMs;
    double budget_ms = kDefaultBudgetMs;
    std::size_t workers = 1;
    std::vector<CameraId> withheld;
};

struct RunOutcome {
    int exit_code = 0;
    std::size_t verdicts = 0;
    std::size_t protocol_errors = 0;
    std::optional<EvalReport> eval;
    std::optional<LatencySummary> latency;
    std::filesystem::path verdict_log;
};

/// Batch: verdict log (+ eval report when labels are available).
/// Stream: verdict log + latency summary. Nonzero exit code on protocol errors;
/// configuration problems throw.
RunOutcome run(const RunConfig& config);

}  // namespace mvqc
