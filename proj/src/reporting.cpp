// Latency summaries and the verdict log.

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <fmt/format.h>
#include <json.hpp>

#include "mvqc/pipeline.hpp"

using nlohmann::json;

namespace mvqc {

double nearest_rank(std::vector<double> samples, double p) {
    if (samples.empty()) throw std::invalid_argument("percentile of an empty sample");
    if (!(p > 0.0 && p <= 100.0)) throw std::invalid_argument("percentile must lie in (0, 100]");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    auto rank = static_cast<std::size_t>(std::ceil(p * n / 100.0));
    rank = std::clamp<std::size_t>(rank, 1, samples.size());
    return samples[rank - 1];
}

namespace {

template <class Proj>
StageStats stats_of(std::span<const StageTimings> t, Proj proj) {
    std::vector<double> v;
    v.reserve(t.size());
    for (const auto& s : t) v.push_back(proj(s));
    StageStats out;
    out.p50 = nearest_rank(v, 50.0);
    out.p95 = nearest_rank(v, 95.0);
    out.max = *std::max_element(v.begin(), v.end());
    return out;
}

json stats_json(const StageStats& s) { return {{"p50_ms", s.p50}, {"p95_ms", s.p95}, {"max_ms", s.max}}; }

}  // namespace

std::optional<LatencySummary> latency_report(std::span<const StageTimings> timings, double budget_ms) {
    if (timings.empty()) return std::nullopt;
    LatencySummary s;
    s.samples = timings.size();
    s.detect = stats_of(timings, [](const StageTimings& t) { return t.detect_ms; });
    s.associate = stats_of(timings, [](const StageTimings& t) { return t.associate_ms; });
    s.fuse = stats_of(timings, [](const StageTimings& t) { return t.fuse_ms; });
    s.log = stats_of(timings, [](const StageTimings& t) { return t.log_ms; });
    s.end_to_end = stats_of(timings, [](const StageTimings& t) { return t.end_to_end_ms; });
    s.sync_wait = stats_of(timings, [](const StageTimings& t) { return t.sync_wait_ms; });
    s.budget_ms = budget_ms;
    s.budget_violations = static_cast<std::size_t>(std::count_if(
        timings.begin(), timings.end(), [&](const StageTimings& t) { return t.end_to_end_ms > budget_ms; }));
    return s;
}

std::string latency_to_json(const LatencySummary& s) {
    json j;
    j["samples"] = s.samples;
    j["percentile_method"] = "nearest-rank";
    j["stages"] = {{"detect", stats_json(s.detect)},   {"associate", stats_json(s.associate)},
                   {"fuse", stats_json(s.fuse)},       {"log", stats_json(s.log)},
                   {"end_to_end", stats_json(s.end_to_end)}, {"sync_wait", stats_json(s.sync_wait)}};
    j["budget_ms"] = s.budget_ms;
    j["budget_violations"] = s.budget_violations;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

VerdictLog::VerdictLog(std::ostream& out, FusionPolicy policy) : out_(out) {
    json h{{"record", "header"}, {"format_version", kVerdictLogFormatVersion}, {"policy", to_string(policy)}};
    out_ << h.dump() << '\n';
    out_.flush();
}

void VerdictLog::write(const AssemblyVerdict& v) {
    out_ << verdict_to_json_line(v) << '\n';
    out_.flush();
}

void VerdictLog::write_protocol_error(const std::string& assembly_id, std::optional<CameraId> camera,
                                      const std::string& detail) {
    json j{{"record", "protocol_error"}, {"assembly_id", assembly_id}, {"detail", detail}};
    j["camera"] = camera ? json(to_string(*camera)) : json(nullptr);
    out_ << j.dump() << '\n';
    out_.flush();
}

VerdictLogSummary summarize_verdict_log(std::istream& in) {
    VerdictLogSummary s;
    std::string line;
    bool header = false;
    std::set<std::string> seen;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error&) {
            throw ConfigError("verdict log line " + std::to_string(lineno) + " is not JSON");
        }
        const std::string kind = j.value("record", "");
        if (!header) {
            if (kind != "header") throw ConfigError("verdict log does not start with a header record");
            if (j.value("format_version", 0) != kVerdictLogFormatVersion) {
                throw ConfigError("unsupported verdict log format_version");
            }
            s.policy = j.value("policy", "");
            header = true;
            continue;
        }
        if (kind == "verdict") {
            ++s.verdicts;
            const std::string id = j.value("assembly_id", "");
            if (!seen.insert(id).second) s.duplicate_assemblies.insert(id);
            ++s.by_overall[j.value("overall", "?")];
            for (const auto& c : j.value("components", json::array())) {
                if (c.value("defect", false)) ++s.defective_components;
            }
        } else if (kind == "protocol_error") {
            ++s.protocol_errors;
        }
    }
    if (!header) throw ConfigError("verdict log is empty");
    return s;
}

std::string render_log_summary(const VerdictLogSummary& s) {
    std::string out = fmt::format("policy: {}\nverdicts: {}\n", s.policy, s.verdicts);
    for (const char* k : {"Pass", "Fail", "Degraded-Pass", "Degraded-Fail"}) {
        const auto it = s.by_overall.find(k);
        out += fmt::format("  {:<14} {}\n", k, it == s.by_overall.end() ? 0 : it->second);
    }
    out += fmt::format("defective components: {}\nprotocol errors: {}\nduplicate assemblies: {}\n",
                       s.defective_components, s.protocol_errors, s.duplicate_assemblies.size());
    return out;
}

std::vector<std::string> verdict_records(std::istream& in) {
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        if (j.value("record", "") == "verdict") out.push_back(j.dump());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace mvqc
