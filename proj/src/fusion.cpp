#include "mvqc/fusion.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "mvqc/detail/text.hpp"

using nlohmann::json;

namespace mvqc {

ComponentRegistry::ComponentRegistry(std::vector<Component> components) : components_(std::move(components)) {
    std::set<std::string> ids;
    for (const auto& c : components_) {
        if (c.id.empty()) throw ConfigError("component id must not be empty");
        if (!ids.insert(c.id).second) throw ConfigError("duplicate component id '" + c.id + "'");
        bool any = false;
        for (const auto& v : c.views) {
            if (!v.visible) continue;
            any = true;
            if (!is_valid(v.roi)) throw ConfigError("component '" + c.id + "' has an invalid ROI");
        }
        if (!any) throw ConfigError("component '" + c.id + "' is not visible in any camera");
    }
}

std::string registry_to_json(const ComponentRegistry& r) {
    json j;
    j["format_version"] = kRegistryFormatVersion;
    j["components"] = json::array();
    for (const auto& c : r.components()) {
        json jc;
        jc["id"] = c.id;
        jc["views"] = json::object();
        for (CameraId cam : kAllCameras) {
            const auto& v = c.view(cam);
            if (!v.visible) continue;
            jc["views"][std::string(to_string(cam))] = {{"roi", {v.roi.cx, v.roi.cy, v.roi.w, v.roi.h}},
                                                        {"visible", true}};
        }
        j["components"].push_back(std::move(jc));
    }
    return j.dump(2) + "\n";
}

ComponentRegistry registry_from_json(std::string_view text) {
    try {
        const json j = json::parse(text);
        const int version = j.at("format_version").get<int>();
        if (version != kRegistryFormatVersion) {
            throw ConfigError("unsupported registry format_version " + std::to_string(version));
        }
        std::vector<Component> comps;
        for (const auto& jc : j.at("components")) {
            Component c;
            c.id = jc.at("id").get<std::string>();
            for (const auto& [name, jv] : jc.at("views").items()) {
                const auto cam = parse_camera(name);
                if (!cam) throw ConfigError("component '" + c.id + "' names unknown camera '" + name + "'");
                const auto roi = jv.at("roi").get<std::vector<double>>();
                if (roi.size() != 4) throw ConfigError("roi must be [cx, cy, w, h]");
                auto& view = c.views[index_of(*cam)];
                view.roi = {roi[0], roi[1], roi[2], roi[3]};
                view.visible = jv.value("visible", true);
            }
            comps.push_back(std::move(c));
        }
        return ComponentRegistry(std::move(comps));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed registry: ") + e.what());
    }
}

ComponentRegistry load_registry(const std::filesystem::path& file) {
    return registry_from_json(detail::read_file(file));
}

std::string_view to_string(ViewState s) noexcept {
    switch (s) {
        case ViewState::Fastened: return "Fastened";
        case ViewState::Loose: return "Loose";
        case ViewState::Undetected: return "Undetected";
    }
    return "?";
}

ViewState state_for_class(int class_id) {
    if (class_id == kFastenedClass) return ViewState::Fastened;
    if (class_id == kLooseClass) return ViewState::Loose;
    throw ContractError("class " + std::to_string(class_id) + " has no fastening state");
}

std::string_view to_string(FusionPolicy p) noexcept {
    switch (p) {
        case FusionPolicy::DefectPriority: return "DefectPriority";
        case FusionPolicy::MajorityVote: return "MajorityVote";
        case FusionPolicy::ConfidenceWeighted: return "ConfidenceWeighted";
    }
    return "?";
}

std::optional<FusionPolicy> parse_policy(std::string_view s) noexcept {
    for (auto p : {FusionPolicy::DefectPriority, FusionPolicy::MajorityVote, FusionPolicy::ConfidenceWeighted}) {
        if (to_string(p) == s) return p;
    }
    return std::nullopt;
}

std::string_view to_string(Overall o) noexcept {
    switch (o) {
        case Overall::Pass: return "Pass";
        case Overall::Fail: return "Fail";
        case Overall::DegradedPass: return "Degraded-Pass";
        case Overall::DegradedFail: return "Degraded-Fail";
    }
    return "?";
}

// ---------------------------------------------------------------------------

Association associate(CameraId camera, std::span<const Detection> detections,
                      const ComponentRegistry& registry, double assoc_iou_threshold) {
    if (registry.empty()) throw ConfigError("component registry is empty");
    check_iou_threshold(assoc_iou_threshold);
    const auto& comps = registry.components();

    std::vector<std::vector<std::size_t>> assigned(comps.size());
    Association out;
    for (std::size_t d = 0; d < detections.size(); ++d) {
        if (detections[d].camera != camera) {
            throw ContractError("detection from camera " + std::string(to_string(detections[d].camera)) +
                                " passed to association for " + std::string(to_string(camera)));
        }
        std::optional<std::size_t> best;
        double best_iou = 0.0;
        for (std::size_t c = 0; c < comps.size(); ++c) {
            const auto& view = comps[c].view(camera);
            if (!view.visible) continue;
            const double v = iou(detections[d].bbox, view.roi);
            if (v < assoc_iou_threshold) continue;
            if (!best || v > best_iou || (v == best_iou && comps[c].id < comps[*best].id)) {
                best = c;
                best_iou = v;
            }
        }
        if (best) {
            assigned[*best].push_back(d);
        } else {
            out.stray.push_back(d);
        }
    }

    for (std::size_t c = 0; c < comps.size(); ++c) {
        if (!comps[c].view(camera).visible) continue;
        ViewVerdict v{comps[c].id, camera, ViewState::Undetected, 0.0, std::nullopt};
        std::optional<std::size_t> keep;
        for (std::size_t d : assigned[c]) {
            if (!keep || detections[d].confidence > detections[*keep].confidence) keep = d;
        }
        for (std::size_t d : assigned[c]) {
            if (d != keep) out.superseded.push_back({d, comps[c].id});
        }
        if (keep) {
            v.state = state_for_class(detections[*keep].class_id);
            v.confidence = detections[*keep].confidence;
            v.detection = keep;
        }
        out.verdicts.push_back(std::move(v));
    }
    return out;
}

FusedState fuse_component(std::span<const ViewVerdict> verdicts, FusionPolicy policy) {
    std::array<bool, kCameraCount> seen{};
    std::size_t loose = 0, fastened = 0;
    double loose_sum = 0.0, fastened_sum = 0.0;
    for (const auto& v : verdicts) {
        auto& flag = seen[index_of(v.camera)];
        if (flag) throw ContractError("two verdicts from camera " + std::string(to_string(v.camera)));
        flag = true;
        if (v.state == ViewState::Loose) {
            ++loose;
            loose_sum += v.confidence;
        } else if (v.state == ViewState::Fastened) {
            ++fastened;
            fastened_sum += v.confidence;
        }
    }

    ViewState state = ViewState::Undetected;
    if (loose + fastened > 0) {
        switch (policy) {
            case FusionPolicy::DefectPriority:
                state = loose > 0 ? ViewState::Loose : ViewState::Fastened;
                break;
            case FusionPolicy::MajorityVote:
                state = loose >= fastened ? ViewState::Loose : ViewState::Fastened;
                break;
            case FusionPolicy::ConfidenceWeighted:
                if (std::abs(fastened_sum - loose_sum) < kWeightedMargin) {
                    state = ViewState::Loose;
                } else {
                    state = fastened_sum > loose_sum ? ViewState::Fastened : ViewState::Loose;
                }
                break;
        }
    }

    FusedState out{state, 0.0};
    if (state == ViewState::Undetected) return out;
    for (const auto& v : verdicts) {
        if (v.state == state) out.confidence = std::max(out.confidence, v.confidence);
    }
    return out;
}

AssemblyVerdict assembly_verdict(std::string assembly_id, std::span<const ViewVerdict> verdicts,
                                 const ComponentRegistry& registry, FusionPolicy policy,
                                 std::span<const CameraId> missing) {
    std::array<bool, kCameraCount> is_missing{};
    for (CameraId c : missing) is_missing[index_of(c)] = true;

    AssemblyVerdict out;
    out.assembly_id = std::move(assembly_id);
    out.policy = policy;
    for (CameraId c : kAllCameras) {
        (is_missing[index_of(c)] ? out.missing : out.contributing).push_back(c);
    }

    bool any_defect = false;
    for (const auto& comp : registry.components()) {
        ComponentOutcome outcome;
        outcome.component_id = comp.id;
        for (const auto& v : verdicts) {
            if (v.component_id == comp.id && !is_missing[index_of(v.camera)]) outcome.views.push_back(v);
        }
        std::sort(outcome.views.begin(), outcome.views.end(),
                  [](const ViewVerdict& a, const ViewVerdict& b) { return a.camera < b.camera; });
        outcome.fused = fuse_component(outcome.views, policy);

        bool observable = false;
        for (CameraId c : kAllCameras) {
            if (comp.view(c).visible && !is_missing[index_of(c)]) observable = true;
        }
        outcome.defect = outcome.fused.state == ViewState::Loose ||
                         (outcome.fused.state == ViewState::Undetected && observable);
        any_defect = any_defect || outcome.defect;
        out.components.push_back(std::move(outcome));
    }

    const bool degraded = !out.missing.empty();
    if (any_defect) {
        out.overall = degraded ? Overall::DegradedFail : Overall::Fail;
    } else {
        out.overall = degraded ? Overall::DegradedPass : Overall::Pass;
    }
    return out;
}

std::string verdict_to_json_line(const AssemblyVerdict& v) {
    json j;
    j["record"] = "verdict";
    j["assembly_id"] = v.assembly_id;
    j["overall"] = to_string(v.overall);
    j["policy"] = to_string(v.policy);
    j["contributing"] = json::array();
    for (CameraId c : v.contributing) j["contributing"].push_back(to_string(c));
    j["missing"] = json::array();
    for (CameraId c : v.missing) j["missing"].push_back(to_string(c));
    j["components"] = json::array();
    for (const auto& c : v.components) {
        json jc;
        jc["id"] = c.component_id;
        jc["state"] = to_string(c.fused.state);
        jc["confidence"] = c.fused.confidence;
        jc["defect"] = c.defect;
        jc["views"] = json::array();
        for (const auto& view : c.views) {
            jc["views"].push_back({{"camera", to_string(view.camera)},
                                   {"state", to_string(view.state)},
                                   {"confidence", view.confidence}});
        }
        j["components"].push_back(std::move(jc));
    }
    return j.dump();
}

}  // namespace mvqc
