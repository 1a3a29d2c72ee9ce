#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iostream>
#include <thread>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "mvqc/detail/text.hpp"
#include "mvqc/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace mvqc {

namespace {

double ms_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

}  // namespace

AssemblyVerdict process_bundle(const FrameBundle& bundle, const ComponentRegistry& registry,
                               const ProcessOptions& options, StageTimings* timings) {
    const auto t0 = Clock::now();
    std::vector<ViewVerdict> views;
    double detect_ms = 0.0;
    for (CameraId cam : kAllCameras) {
        const auto& slot = bundle.slots[index_of(cam)];
        if (!slot) continue;
        detect_ms = std::max(detect_ms, bundle.detect_ms[index_of(cam)]);
        auto assoc = associate(cam, *slot, registry, options.assoc_iou);
        for (auto& v : assoc.verdicts) views.push_back(std::move(v));
    }
    const auto t1 = Clock::now();
    const auto missing = bundle.missing();
    AssemblyVerdict verdict = assembly_verdict(bundle.assembly_id, views, registry, options.policy, missing);
    const auto t2 = Clock::now();
    if (timings) {
        timings->detect_ms = detect_ms;
        timings->associate_ms = ms_between(t0, t1);
        timings->fuse_ms = ms_between(t1, t2);
        timings->sync_wait_ms = bundle.emitted_ms - bundle.first_arrival_ms;
        timings->end_to_end_ms = timings->detect_ms + timings->associate_ms + timings->fuse_ms + timings->log_ms;
    }
    return verdict;
}

// ---------------------------------------------------------------------------
// batch

BatchResult run_batch(std::span<const std::string> assembly_ids, const DetectorBackend& backend,
                      const ComponentRegistry& registry, const ProcessOptions& options,
                      std::span<const CameraId> withheld, std::size_t workers) {
    std::array<bool, kCameraCount> skip{};
    for (CameraId c : withheld) skip[index_of(c)] = true;

    BatchResult out;
    out.verdicts.resize(assembly_ids.size());
    out.timings.resize(assembly_ids.size());

    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    const auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= assembly_ids.size()) return;
            try {
                FrameBundle bundle;
                bundle.assembly_id = assembly_ids[i];
                for (CameraId cam : kAllCameras) {
                    if (skip[index_of(cam)]) continue;
                    const auto t0 = Clock::now();
                    try {
                        bundle.slots[index_of(cam)] = backend.detect({assembly_image_id(cam, assembly_ids[i]), cam});
                    } catch (const LookupError&) {
                        continue;
                    }
                    bundle.detect_ms[index_of(cam)] = ms_between(t0, Clock::now());
                }
                bundle.complete = bundle.missing().empty();
                out.verdicts[i] = process_bundle(bundle, registry, options, &out.timings[i]);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = assembly_ids.size();
                return;
            }
        }
    };

    workers = std::max<std::size_t>(1, workers);
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);
    return out;
}

// ---------------------------------------------------------------------------
// events

CameraEvent parse_event_line(std::string_view line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ProtocolError(std::string("event is not valid JSON: ") + e.what());
    }
    try {
        CameraEvent ev;
        const auto cam = parse_camera(j.at("camera").get<std::string>());
        if (!cam) throw ProtocolError("event names an unknown camera");
        ev.camera = *cam;
        ev.assembly_id = j.at("assembly_id").get<std::string>();
        if (ev.assembly_id.empty()) throw ProtocolError("event has an empty assembly_id");
        const std::string image_id = assembly_image_id(ev.camera, ev.assembly_id);
        for (const auto& jd : j.value("detections", json::array())) {
            Detection d;
            d.class_id = jd.at("class_id").get<int>();
            if (d.class_id != kFastenedClass && d.class_id != kLooseClass) {
                throw ProtocolError("detection class outside taxonomy");
            }
            d.confidence = jd.at("confidence").get<double>();
            if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) throw ProtocolError("confidence outside [0, 1]");
            try {
                d.bbox = clamp_to_frame({jd.at("cx").get<double>(), jd.at("cy").get<double>(),
                                         jd.at("w").get<double>(), jd.at("h").get<double>()})
                             .box;
            } catch (const GeometryError& e) {
                throw ProtocolError(e.what());
            }
            d.camera = ev.camera;
            d.image_id = image_id;
            ev.detections.push_back(std::move(d));
        }
        return ev;
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed event: ") + e.what());
    }
}

std::string event_to_json_line(const CameraEvent& e) {
    json j{{"camera", to_string(e.camera)}, {"assembly_id", e.assembly_id}};
    j["detections"] = json::array();
    for (const auto& d : e.detections) {
        j["detections"].push_back({{"class_id", d.class_id}, {"cx", d.bbox.cx}, {"cy", d.bbox.cy},
                                   {"w", d.bbox.w}, {"h", d.bbox.h}, {"confidence", d.confidence}});
    }
    return j.dump();
}

std::vector<std::string> discover_assemblies(const fs::path& detections_root) {
    if (!fs::is_directory(detections_root)) {
        throw ConfigError("detections directory '" + detections_root.string() + "' not found");
    }
    std::set<std::string> stems;
    for (CameraId cam : kAllCameras) {
        const fs::path dir = detections_root / std::string(to_string(cam));
        if (!fs::is_directory(dir)) continue;
        for (const auto& f : fs::directory_iterator(dir)) {
            if (f.is_regular_file() && f.path().extension() == ".txt") stems.insert(f.path().stem().string());
        }
    }
    return {stems.begin(), stems.end()};
}

// ---------------------------------------------------------------------------
// streaming

namespace {

/// Single consumer: drains the queue through the synchronizer, fuses, logs.
void consume(EventQueue<CameraEvent>& queue, const ComponentRegistry& registry, const StreamOptions& options,
             VerdictLog& log, StreamResult& result) {
    const auto start = Clock::now();
    const auto now = [&] { return ms_between(start, Clock::now()); };
    Synchronizer sync(options.timeout_ms);

    const auto handle = [&](std::vector<FrameBundle> bundles) {
        for (auto& b : bundles) {
            ++result.bundles;
            if (b.poisoned) {
                ++result.protocol_errors;
                spdlog::error("assembly {}: {}", b.assembly_id, b.error);
                log.write_protocol_error(b.assembly_id, std::nullopt, b.error);
                continue;
            }
            StageTimings t;
            AssemblyVerdict v = process_bundle(b, registry, options.process, &t);
            const auto t0 = Clock::now();
            log.write(v);
            t.log_ms = ms_between(t0, Clock::now());
            t.end_to_end_ms += t.log_ms;
            if (v.degraded()) ++result.degraded;
            ++result.verdicts;
            result.timings.push_back(t);
        }
    };

    for (;;) {
        const auto deadline = sync.next_deadline();
        const double wait = deadline ? std::max(0.0, *deadline - now()) : kNoTimeout;
        CameraEvent ev;
        const auto status = queue.pop(ev, wait);
        if (status == EventQueue<CameraEvent>::Status::Item) {
            handle(sync.offer(std::move(ev), now()));
        } else if (status == EventQueue<CameraEvent>::Status::Timeout) {
            handle(sync.poll(now()));
        } else {
            handle(sync.flush(now()));
            break;
        }
    }
    for (const auto& issue : sync.issues()) {
        ++result.protocol_errors;
        spdlog::warn("assembly {} camera {}: {}", issue.assembly_id, to_string(issue.camera), issue.detail);
        log.write_protocol_error(issue.assembly_id, issue.camera, issue.detail);
    }
    result.wall_ms = now();
}

std::size_t active_cameras(const StreamOptions& options) {
    std::size_t n = kCameraCount;
    for (CameraId c : kAllCameras) {
        if (std::find(options.withheld.begin(), options.withheld.end(), c) != options.withheld.end()) --n;
    }
    return n;
}

bool withheld(const StreamOptions& options, CameraId c) {
    return std::find(options.withheld.begin(), options.withheld.end(), c) != options.withheld.end();
}

/// Runs `next_line` on a reader thread, turning each line into an event.
StreamResult stream_lines(const std::function<bool(std::string&)>& next_line, const ComponentRegistry& registry,
                          const StreamOptions& options, VerdictLog& log) {
    EventQueue<CameraEvent> queue;
    queue.set_producers(1);
    std::vector<std::string> errors;
    std::thread reader([&] {
        std::string line;
        std::size_t lineno = 0;
        while (next_line(line)) {
            ++lineno;
            if (line.empty() || line == "\r") continue;
            try {
                CameraEvent ev = parse_event_line(line);
                if (withheld(options, ev.camera)) continue;
                queue.push(std::move(ev));
            } catch (const ProtocolError& e) {
                errors.push_back("event line " + std::to_string(lineno) + ": " + e.what());
            }
        }
        queue.producer_done();
    });
    StreamResult result;
    try {
        consume(queue, registry, options, log, result);
    } catch (...) {
        reader.join();
        throw;
    }
    reader.join();
    for (const auto& e : errors) {
        ++result.protocol_errors;
        spdlog::error("{}", e);
        log.write_protocol_error("", std::nullopt, e);
    }
    return result;
}

}  // namespace

StreamResult run_stream_replay(const fs::path& detections_root, std::span<const std::string> assembly_ids,
                               const ComponentRegistry& registry, const StreamOptions& options, VerdictLog& log) {
    EventQueue<CameraEvent> queue;
    queue.set_producers(active_cameras(options));
    std::vector<std::thread> producers;
    std::mutex error_mutex;
    std::exception_ptr error;
    for (CameraId cam : kAllCameras) {
        if (withheld(options, cam)) continue;
        producers.emplace_back([&, cam] {
            try {
                const fs::path dir = detections_root / std::string(to_string(cam));
                for (const auto& id : assembly_ids) {
                    const fs::path file = dir / (id + ".txt");
                    const auto t0 = Clock::now();
                    if (!fs::exists(file)) continue;
                    CameraEvent ev;
                    ev.camera = cam;
                    ev.assembly_id = id;
                    ev.detections = parse_detection_file(detail::read_file(file), assembly_image_id(cam, id), cam);
                    ev.detect_ms = ms_between(t0, Clock::now());
                    queue.push(std::move(ev));
                }
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
            queue.producer_done();
        });
    }
    StreamResult result;
    try {
        consume(queue, registry, options, log, result);
    } catch (...) {
        for (auto& t : producers) t.join();
        throw;
    }
    for (auto& t : producers) t.join();
    if (error) std::rethrow_exception(error);
    return result;
}

StreamResult run_stream_events(std::istream& in, const ComponentRegistry& registry, const StreamOptions& options,
                               VerdictLog& log) {
    return stream_lines([&](std::string& line) { return static_cast<bool>(std::getline(in, line)); }, registry,
                        options, log);
}

StreamResult run_stream_socket(std::uint16_t port, const ComponentRegistry& registry, const StreamOptions& options,
                               VerdictLog& log, const std::function<void(std::uint16_t)>& on_listening) {
    struct Fd {
        int fd = -1;
        ~Fd() {
            if (fd >= 0) ::close(fd);
        }
    };
    const auto fail = [](const char* what) {
        throw ConfigError(std::string(what) + ": " + std::strerror(errno));
    };

    Fd server{::socket(AF_INET, SOCK_STREAM, 0)};
    if (server.fd < 0) fail("socket");
    const int yes = 1;
    ::setsockopt(server.fd, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(server.fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) fail("bind");
    if (::listen(server.fd, 1) < 0) fail("listen");
    socklen_t len = sizeof addr;
    ::getsockname(server.fd, reinterpret_cast<sockaddr*>(&addr), &len);
    const auto bound = ntohs(addr.sin_port);
    spdlog::info("listening for camera events on 127.0.0.1:{}", bound);
    if (on_listening) on_listening(bound);

    Fd client{::accept(server.fd, nullptr, nullptr)};
    if (client.fd < 0) fail("accept");

    std::string buffer;
    bool eof = false;
    const auto next_line = [&](std::string& line) {
        for (;;) {
            const auto nl = buffer.find('\n');
            if (nl != std::string::npos) {
                line = buffer.substr(0, nl);
                buffer.erase(0, nl + 1);
                return true;
            }
            if (eof) {
                if (buffer.empty()) return false;
                line = std::move(buffer);
                buffer.clear();
                return true;
            }
            char chunk[4096];
            const auto n = ::recv(client.fd, chunk, sizeof chunk, 0);
            if (n <= 0) {
                eof = true;
            } else {
                buffer.append(chunk, static_cast<std::size_t>(n));
            }
        }
    };
    return stream_lines(next_line, registry, options, log);
}

// ---------------------------------------------------------------------------

RunOutcome run(const RunConfig& config) {
    const ComponentRegistry registry = load_registry(config.registry_file);
    fs::create_directories(config.output_dir);
    RunOutcome outcome;
    outcome.verdict_log = config.output_dir / "verdicts.jsonl";
    std::ofstream log_file(outcome.verdict_log, std::ios::trunc);
    if (!log_file) throw ConfigError("cannot write " + outcome.verdict_log.string());
    VerdictLog log(log_file, config.process.policy);

    if (config.mode == RunMode::Batch) {
        const ReplayBackend backend = ReplayBackend::from_directory(config.detections_root);
        const auto ids = discover_assemblies(config.detections_root);
        const BatchResult batch = run_batch(ids, backend, registry, config.process, config.withheld, config.workers);
        for (const auto& v : batch.verdicts) log.write(v);
        outcome.verdicts = batch.verdicts.size();
        outcome.latency = latency_report(batch.timings, config.budget_ms);

        if (!config.dataset_root.empty()) {
            const DatasetManifest manifest = build_manifest(config.dataset_root);
            std::vector<EvalImage> images;
            for (const auto& rec : manifest.records) {
                EvalImage img;
                img.ground_truth = rec.instances;
                try {
                    for (const auto& d : backend.detect({rec.image_id, rec.camera})) {
                        img.detections.push_back({d.bbox, d.confidence, d.class_id});
                    }
                } catch (const LookupError&) {
                    spdlog::warn("no detections stored for {}; scored as empty", rec.image_id);
                }
                images.push_back(std::move(img));
            }
            EvalConfig ec;
            ec.class_names = manifest.class_names;
            outcome.eval = evaluate(images, ec);
            detail::write_file(config.output_dir / "eval.json", eval_report_to_json(*outcome.eval));
            detail::write_file(config.output_dir / "eval.csv", eval_report_to_csv(*outcome.eval));
        }
    } else {
        StreamOptions so;
        so.process = config.process;
        so.timeout_ms = config.timeout_ms;
        so.withheld = config.withheld;
        StreamResult sr;
        if (config.events_file) {
            if (*config.events_file == "-") {
                sr = run_stream_events(std::cin, registry, so, log);
            } else {
                std::ifstream in(*config.events_file);
                if (!in) throw ConfigError("cannot read events file " + config.events_file->string());
                sr = run_stream_events(in, registry, so, log);
            }
        } else if (config.listen_port) {
            sr = run_stream_socket(*config.listen_port, registry, so, log);
        } else {
            const auto ids = discover_assemblies(config.detections_root);
            sr = run_stream_replay(config.detections_root, ids, registry, so, log);
        }
        outcome.verdicts = sr.verdicts;
        outcome.protocol_errors = sr.protocol_errors;
        outcome.latency = latency_report(sr.timings, config.budget_ms);
    }
    if (outcome.latency) detail::write_file(config.output_dir / "latency.json", latency_to_json(*outcome.latency));
    outcome.exit_code = outcome.protocol_errors > 0 ? 2 : 0;
    return outcome;
}

}  // namespace mvqc
