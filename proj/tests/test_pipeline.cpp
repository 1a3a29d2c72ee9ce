#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <fstream>
#include <future>
#include <random>
#include <sstream>

#include "mvqc/detail/text.hpp"
#include "mvqc/pipeline.hpp"

using namespace mvqc;
namespace fs = std::filesystem;

namespace {

CameraEvent ev(CameraId cam, const std::string& id) {
    CameraEvent e;
    e.camera = cam;
    e.assembly_id = id;
    return e;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("mvqc_test_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

/// Writes a harness with `n` assemblies and returns its root.
Harness write_sample(const fs::path& root, std::size_t n, std::uint64_t seed = 3) {
    HarnessConfig hc;
    hc.assemblies = n;
    hc.seed = seed;
    Harness h = make_harness(hc, default_station_registry());
    const SyntheticBackend backend(h.manifest, hc.profiles, seed);
    write_harness(h, backend, root);
    return h;
}

std::vector<std::string> records_of(const fs::path& log) {
    std::ifstream in(log);
    return verdict_records(in);
}

}  // namespace

TEST_CASE("synchronizer: complete bundle in any order") {
    std::vector<CameraId> order{CameraId::Top, CameraId::Middle, CameraId::Bottom};
    std::sort(order.begin(), order.end());
    do {
        Synchronizer s(100);
        std::vector<FrameBundle> out;
        double t = 0;
        for (CameraId c : order) {
            auto b = s.offer(ev(c, "A1"), t += 1);
            out.insert(out.end(), b.begin(), b.end());
        }
        REQUIRE(out.size() == 1);
        CHECK(out[0].complete);
        CHECK(out[0].missing().empty());
        CHECK(s.pending() == 0);
    } while (std::next_permutation(order.begin(), order.end()));
}

TEST_CASE("synchronizer: timeout marks the missing camera") {
    Synchronizer s(50);
    CHECK(s.offer(ev(CameraId::Top, "A2"), 0).empty());
    CHECK(s.offer(ev(CameraId::Bottom, "A2"), 10).empty());
    CHECK(s.next_deadline() == 50.0);
    CHECK(s.poll(49).empty());
    const auto out = s.poll(50);
    REQUIRE(out.size() == 1);
    CHECK_FALSE(out[0].complete);
    CHECK(out[0].missing() == std::vector<CameraId>{CameraId::Middle});
    CHECK(out[0].emitted_ms - out[0].first_arrival_ms == 50.0);
}

TEST_CASE("synchronizer: late and duplicate events") {
    Synchronizer s(50);
    s.offer(ev(CameraId::Top, "A1"), 0);
    REQUIRE(s.poll(60).size() == 1);
    CHECK(s.offer(ev(CameraId::Middle, "A1"), 61).empty());
    CHECK(s.offer(ev(CameraId::Top, "A1"), 62).empty());
    REQUIRE(s.issues().size() == 2);
    CHECK(s.issues()[0].detail.find("late") != std::string::npos);
    CHECK(s.issues()[1].detail.find("duplicate") != std::string::npos);
    CHECK(s.emitted() == 1);
}

TEST_CASE("synchronizer: duplicate while pending poisons the bundle") {
    Synchronizer s(50);
    s.offer(ev(CameraId::Top, "A3"), 0);
    const auto out = s.offer(ev(CameraId::Top, "A3"), 1);
    REQUIRE(out.size() == 1);
    CHECK(out[0].poisoned);
    CHECK_FALSE(out[0].error.empty());
    CHECK(s.pending() == 0);
}

TEST_CASE("synchronizer: flush and validation") {
    Synchronizer s(kNoTimeout);
    s.offer(ev(CameraId::Top, "B"), 0);
    s.offer(ev(CameraId::Top, "A"), 1);
    CHECK(s.poll(1e12).empty());
    const auto out = s.flush(5);
    REQUIRE(out.size() == 2);
    CHECK(out[0].assembly_id == "B");
    CHECK(out[1].assembly_id == "A");
    CHECK_THROWS(Synchronizer(0));
}

TEST_CASE("synchronizer: interleaved arrivals are emitted exactly once") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<CameraEvent> events;
        for (CameraId c : kAllCameras) {
            for (int a = 0; a < 3; ++a) events.push_back(ev(c, "A" + std::to_string(a)));
        }
        std::shuffle(events.begin(), events.end(), rng);
        Synchronizer s(kNoTimeout);
        std::map<std::string, int> seen;
        for (std::size_t i = 0; i < events.size(); ++i) {
            for (const auto& b : s.offer(events[i], static_cast<double>(i))) {
                ++seen[b.assembly_id];
                CHECK(b.complete);
            }
        }
        CHECK(s.flush(100).empty());
        CHECK(seen.size() == 3);
        for (const auto& [id, n] : seen) CHECK(n == 1);
    }
}

TEST_CASE("nearest-rank percentiles") {
    CHECK(nearest_rank({4.0}, 50) == 4.0);
    CHECK(nearest_rank({4.0}, 95) == 4.0);
    std::vector<double> hundred;
    for (int i = 1; i <= 100; ++i) hundred.push_back(i);
    std::shuffle(hundred.begin(), hundred.end(), std::mt19937_64(1));
    CHECK(nearest_rank(hundred, 95) == 95.0);
    CHECK(nearest_rank(hundred, 50) == 50.0);
    CHECK(nearest_rank(hundred, 100) == 100.0);
    CHECK_THROWS(nearest_rank({}, 50));
    CHECK_THROWS(nearest_rank({1.0}, 0));
}

TEST_CASE("latency report") {
    CHECK_FALSE(latency_report({}).has_value());
    std::vector<StageTimings> t(10);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i].detect_ms = 1;
        t[i].associate_ms = 0.5;
        t[i].end_to_end_ms = i < 8 ? 2.0 : 12.0;
    }
    const auto s = latency_report(t, 9.0);
    REQUIRE(s);
    CHECK(s->samples == 10);
    CHECK(s->end_to_end.p50 == 2.0);
    CHECK(s->end_to_end.max == 12.0);
    CHECK(s->budget_violations == 2);
    CHECK(latency_to_json(*s).find("\"nearest-rank\"") != std::string::npos);
}

TEST_CASE("verdict log round trip") {
    std::stringstream buf;
    VerdictLog log(buf, FusionPolicy::DefectPriority);
    const auto reg = default_station_registry();
    log.write(assembly_verdict("A1", {}, reg, FusionPolicy::DefectPriority));
    log.write(assembly_verdict("A1", {}, reg, FusionPolicy::DefectPriority));
    log.write_protocol_error("A2", CameraId::Top, "duplicate");
    const auto s = summarize_verdict_log(buf);
    CHECK(s.policy == "DefectPriority");
    CHECK(s.verdicts == 2);
    CHECK(s.protocol_errors == 1);
    CHECK(s.duplicate_assemblies == std::set<std::string>{"A1"});
    CHECK(s.by_overall.at("Fail") == 2);
    CHECK(render_log_summary(s).find("protocol errors: 1") != std::string::npos);

    std::stringstream headless("{\"record\":\"verdict\"}\n");
    CHECK_THROWS_AS(summarize_verdict_log(headless), ConfigError);
    std::stringstream wrong("{\"record\":\"header\",\"format_version\":99}\n");
    CHECK_THROWS_AS(summarize_verdict_log(wrong), ConfigError);
}

TEST_CASE("event lines") {
    CameraEvent e = ev(CameraId::Middle, "A9");
    e.detections.push_back({{0.25, 0.6, 0.06, 0.06}, 1, 0.75, CameraId::Middle, "middle/A9"});
    const auto back = parse_event_line(event_to_json_line(e));
    CHECK(back.camera == CameraId::Middle);
    CHECK(back.assembly_id == "A9");
    CHECK(back.detections == e.detections);

    CHECK_THROWS_AS(parse_event_line("not json"), ProtocolError);
    CHECK_THROWS_AS(parse_event_line(R"({"camera":"side","assembly_id":"A"})"), ProtocolError);
    CHECK_THROWS_AS(parse_event_line(R"({"camera":"top"})"), ProtocolError);
    CHECK_THROWS_AS(parse_event_line(
                        R"({"camera":"top","assembly_id":"A","detections":[{"class_id":5,"cx":0.5,"cy":0.5,"w":0.1,"h":0.1,"confidence":0.5}]})"),
                    ProtocolError);
    CHECK_THROWS_AS(parse_event_line(
                        R"({"camera":"top","assembly_id":"A","detections":[{"class_id":0,"cx":0.5,"cy":0.5,"w":0,"h":0.1,"confidence":0.5}]})"),
                    ProtocolError);
}

TEST_CASE("event queue hand-off") {
    EventQueue<int> q;
    q.set_producers(2);
    std::thread a([&] {
        for (int i = 0; i < 100; ++i) q.push(i);
        q.producer_done();
    });
    std::thread b([&] {
        for (int i = 100; i < 200; ++i) q.push(i);
        q.producer_done();
    });
    int item = 0, count = 0, sum = 0;
    for (;;) {
        const auto st = q.pop(item, kNoTimeout);
        if (st == EventQueue<int>::Status::Closed) break;
        if (st == EventQueue<int>::Status::Item) {
            ++count;
            sum += item;
        }
    }
    a.join();
    b.join();
    CHECK(count == 200);
    CHECK(sum == 199 * 200 / 2);

    EventQueue<int> idle;
    idle.set_producers(1);
    CHECK(idle.pop(item, 1.0) == EventQueue<int>::Status::Timeout);
}

TEST_CASE("harness") {
    HarnessConfig hc;
    hc.assemblies = 50;
    const auto h = make_harness(hc, default_station_registry());
    CHECK(h.assembly_ids.size() == 50);
    CHECK(h.manifest.records.size() == 150);
    CHECK(h.truth.size() == 50);
    CHECK(h.manifest.records[0].instances.size() == 4);
    hc.loose_probability = 1.5;
    CHECK_THROWS_AS(make_harness(hc, default_station_registry()), ConfigError);
}

TEST_CASE("batch run: one record per assembly, independent of workers") {
    TempDir d("batch");
    const auto h = write_sample(d.path, 120);
    const auto backend = ReplayBackend::from_directory(d.path / "detections");
    const auto reg = load_registry(d.path / "registry.json");
    const auto one = run_batch(h.assembly_ids, backend, reg, {}, {}, 1);
    const auto four = run_batch(h.assembly_ids, backend, reg, {}, {}, 4);
    REQUIRE(one.verdicts.size() == 120);
    for (std::size_t i = 0; i < one.verdicts.size(); ++i) {
        CHECK(one.verdicts[i].assembly_id == h.assembly_ids[i]);
        CHECK(verdict_to_json_line(one.verdicts[i]) == verdict_to_json_line(four.verdicts[i]));
    }

    const std::vector<CameraId> withheld{CameraId::Middle};
    const auto degraded = run_batch(h.assembly_ids, backend, reg, {}, withheld, 2);
    for (const auto& v : degraded.verdicts) {
        CHECK(v.degraded());
        CHECK(v.missing == withheld);
    }
}

TEST_CASE("run: batch and stream agree") {
    TempDir d("modes");
    write_sample(d.path, 200);
    RunConfig rc;
    rc.registry_file = d.path / "registry.json";
    rc.detections_root = d.path / "detections";
    rc.dataset_root = d.path;
    rc.output_dir = d.path / "batch";
    rc.workers = 3;
    const auto batch = run(rc);
    CHECK(batch.exit_code == 0);
    CHECK(batch.verdicts == 200);
    REQUIRE(batch.eval);
    CHECK(fs::exists(d.path / "batch" / "eval.json"));
    CHECK(fs::exists(d.path / "batch" / "eval.csv"));

    rc.mode = RunMode::Stream;
    rc.timeout_ms = kNoTimeout;
    rc.output_dir = d.path / "stream";
    const auto stream = run(rc);
    CHECK(stream.exit_code == 0);
    CHECK(stream.verdicts == 200);
    REQUIRE(stream.latency);
    CHECK(fs::exists(d.path / "stream" / "latency.json"));
    CHECK(records_of(batch.verdict_log) == records_of(stream.verdict_log));
}

TEST_CASE("stream replay of 1000 assemblies") {
    TempDir d("replay1000");
    const auto h = write_sample(d.path, 1000, 8);
    std::stringstream buf;
    VerdictLog log(buf, FusionPolicy::DefectPriority);
    StreamOptions so;
    const auto r = run_stream_replay(d.path / "detections", h.assembly_ids, default_station_registry(), so, log);
    CHECK(r.verdicts == 1000);
    CHECK(r.protocol_errors == 0);
    const auto s = summarize_verdict_log(buf);
    CHECK(s.verdicts == 1000);
    CHECK(s.duplicate_assemblies.empty());
}

TEST_CASE("stream from an event file with a withheld camera") {
    TempDir d("events");
    const auto h = write_sample(d.path, 30);
    const auto backend = ReplayBackend::from_directory(d.path / "detections");
    std::stringstream events;
    for (const auto& id : h.assembly_ids) {
        for (CameraId c : kAllCameras) {
            CameraEvent e = ev(c, id);
            e.detections = backend.detect({assembly_image_id(c, id), c});
            events << event_to_json_line(e) << '\n';
        }
    }
    events << "garbage\n";
    std::stringstream out;
    VerdictLog log(out, FusionPolicy::MajorityVote);
    StreamOptions so;
    so.process.policy = FusionPolicy::MajorityVote;
    so.withheld = {CameraId::Bottom};
    so.timeout_ms = 20;
    const auto r = run_stream_events(events, default_station_registry(), so, log);
    CHECK(r.verdicts == 30);
    CHECK(r.degraded == 30);
    CHECK(r.protocol_errors == 1);
}

TEST_CASE("stream over a socket") {
    TempDir d("socket");
    const auto h = write_sample(d.path, 20);
    const auto backend = ReplayBackend::from_directory(d.path / "detections");
    std::promise<std::uint16_t> port;
    auto bound = port.get_future();
    std::stringstream out;
    VerdictLog log(out, FusionPolicy::DefectPriority);
    StreamOptions so;
    auto server = std::async(std::launch::async, [&] {
        return run_stream_socket(0, default_station_registry(), so, log,
                                 [&](std::uint16_t p) { port.set_value(p); });
    });
    const std::uint16_t p = bound.get();
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(p);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
    std::string payload;
    for (const auto& id : h.assembly_ids) {
        for (CameraId c : kAllCameras) {
            CameraEvent e = ev(c, id);
            e.detections = backend.detect({assembly_image_id(c, id), c});
            payload += event_to_json_line(e) + "\n";
        }
    }
    // a repeat of the very first event arrives after its bundle was emitted
    payload += event_to_json_line(ev(CameraId::Top, h.assembly_ids.front())) + "\n";
    std::size_t sent = 0;
    while (sent < payload.size()) {
        const auto n = ::send(fd, payload.data() + sent, payload.size() - sent, 0);
        REQUIRE(n > 0);
        sent += static_cast<std::size_t>(n);
    }
    ::close(fd);
    const auto r = server.get();
    CHECK(r.verdicts == 20);
    CHECK(r.protocol_errors == 1);
}

TEST_CASE("run: configuration errors and protocol exit code") {
    TempDir d("runerr");
    RunConfig rc;
    rc.registry_file = d.path / "missing.json";
    rc.output_dir = d.path / "out";
    CHECK_THROWS(run(rc));

    write_sample(d.path, 5);
    rc.registry_file = d.path / "registry.json";
    rc.mode = RunMode::Stream;
    rc.events_file = d.path / "events.jsonl";
    detail::write_file(*rc.events_file, event_to_json_line(ev(CameraId::Top, "X")) + "\n" +
                                            event_to_json_line(ev(CameraId::Top, "X")) + "\n");
    const auto outcome = run(rc);
    CHECK(outcome.exit_code == 2);
    CHECK(outcome.protocol_errors == 1);
    CHECK(outcome.verdicts == 0);

    rc.events_file = d.path / "nope.jsonl";
    CHECK_THROWS_AS(run(rc), ConfigError);
}

TEST_CASE("exact-overlap fixture rejects impossible inputs") {
    CHECK_THROWS(exact_overlap_fixture(10, 11));
    CHECK_THROWS(exact_overlap_fixture(10, 5, 0));
    const auto f = exact_overlap_fixture(1000, 999);
    CHECK(f.size() == 100);
}
