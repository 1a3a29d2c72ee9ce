#include "mvqc/detector.hpp"

#include <cmath>
#include <random>

#include <json.hpp>

#include "mvqc/detail/box_line.hpp"
#include "mvqc/detail/text.hpp"
#include "mvqc/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mvqc {

std::vector<Detection> parse_detection_file(std::string_view text, const std::string& image_id,
                                            CameraId camera, std::size_t class_count) {
    std::vector<Detection> out;
    detail::for_each_line(text, [&](std::size_t lineno, std::string_view line) {
        auto parsed = detail::parse_box_line(line, lineno, class_count, true);
        if (!parsed) return;
        out.push_back({parsed->bbox, parsed->class_id, *parsed->confidence, camera, image_id});
    });
    return out;
}

std::string write_detection_file(std::span<const Detection> detections) {
    std::string out;
    for (const auto& d : detections) detail::append_box_line(out, d.class_id, d.bbox, d.confidence);
    return out;
}

// ---------------------------------------------------------------------------
// profiles

void DetectorProfile::validate() const {
    const auto prob = [](double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; };
    if (recall.empty()) throw ProfileError("profile needs a recall value per class");
    for (double r : recall) {
        if (!prob(r)) throw ProfileError("recall must lie in [0, 1]");
    }
    if (!(std::isfinite(fp_rate) && fp_rate >= 0.0)) throw ProfileError("fp_rate must be >= 0");
    if (!(std::isfinite(sigma) && sigma >= 0.0)) throw ProfileError("sigma must be >= 0");
    if (!prob(confusion)) throw ProfileError("confusion must lie in [0, 1]");
    for (const BetaShape& s : {tp_confidence, fp_confidence}) {
        if (!(s.alpha > 0.0 && s.beta > 0.0)) throw ProfileError("beta shape parameters must be > 0");
    }
    if (!(fp_min_size > 0.0 && fp_min_size <= fp_max_size && fp_max_size <= 1.0)) {
        throw ProfileError("false-positive size range must satisfy 0 < min <= max <= 1");
    }
    if (!(nms_threshold > 0.0 && nms_threshold <= 1.0)) throw ProfileError("nms_threshold must lie in (0, 1]");
}

std::string profile_to_json(const DetectorProfile& p) {
    json j;
    j["format_version"] = kProfileFormatVersion;
    j["recall"] = p.recall;
    j["fp_rate"] = p.fp_rate;
    j["sigma"] = p.sigma;
    j["confusion"] = p.confusion;
    j["tp_confidence"] = {{"alpha", p.tp_confidence.alpha}, {"beta", p.tp_confidence.beta}};
    j["fp_confidence"] = {{"alpha", p.fp_confidence.alpha}, {"beta", p.fp_confidence.beta}};
    j["fp_size"] = {{"min", p.fp_min_size}, {"max", p.fp_max_size}};
    j["nms_threshold"] = p.nms_threshold;
    j["assumed_instances_per_image"] = p.assumed_instances_per_image;
    return j.dump(2) + "\n";
}

DetectorProfile profile_from_json(std::string_view text) {
    DetectorProfile p;
    try {
        const json j = json::parse(text);
        const int version = j.at("format_version").get<int>();
        if (version != kProfileFormatVersion) {
            throw ProfileError("unsupported profile format_version " + std::to_string(version));
        }
        p.recall = j.at("recall").get<std::vector<double>>();
        p.fp_rate = j.at("fp_rate").get<double>();
        p.sigma = j.at("sigma").get<double>();
        p.confusion = j.at("confusion").get<double>();
        if (j.contains("tp_confidence")) {
            p.tp_confidence = {j["tp_confidence"].at("alpha").get<double>(),
                               j["tp_confidence"].at("beta").get<double>()};
        }
        if (j.contains("fp_confidence")) {
            p.fp_confidence = {j["fp_confidence"].at("alpha").get<double>(),
                               j["fp_confidence"].at("beta").get<double>()};
        }
        if (j.contains("fp_size")) {
            p.fp_min_size = j["fp_size"].at("min").get<double>();
            p.fp_max_size = j["fp_size"].at("max").get<double>();
        }
        p.nms_threshold = j.value("nms_threshold", p.nms_threshold);
        p.assumed_instances_per_image = j.value("assumed_instances_per_image", 0.0);
    } catch (const json::exception& e) {
        throw ProfileError(std::string("malformed profile: ") + e.what());
    }
    p.validate();
    return p;
}

DetectorProfile load_profile(const fs::path& file) { return profile_from_json(detail::read_file(file)); }

DetectorProfile preset_profile(CameraId camera) {
    // fp_rate = d * R * (1 - P) / P, so that TP / (TP + FP) = P at d instances per image.
    constexpr double density = 4.0;
    const auto make = [&](double precision, double recall) {
        DetectorProfile p;
        p.recall = {recall, recall};
        p.fp_rate = density * recall * (1.0 - precision) / precision;
        p.sigma = 0.002;
        p.assumed_instances_per_image = density;
        return p;
    };
    switch (camera) {
        case CameraId::Top: return make(0.900, 0.987);
        case CameraId::Middle: return make(0.971, 0.241);
        case CameraId::Bottom: return make(0.866, 0.658);
    }
    return {};
}

// ---------------------------------------------------------------------------
// synthetic detector

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double truncated_normal(std::mt19937_64& rng, double sigma) {
    std::normal_distribution<double> n(0.0, sigma);
    for (;;) {
        const double z = n(rng);
        if (std::abs(z) <= 3.0 * sigma) return z;
    }
}

double sample_beta(std::mt19937_64& rng, const BetaShape& s) {
    std::gamma_distribution<double> ga(s.alpha, 1.0);
    std::gamma_distribution<double> gb(s.beta, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    if (x + y <= 0.0) return s.mean();
    return x / (x + y);
}

}  // namespace

std::vector<Detection> synth_detect(const AnnotationRecord& gt, const DetectorProfile& profile,
                                    std::uint64_t seed) {
    profile.validate();
    std::mt19937_64 rng(derive_seed(seed, gt.image_id));
    const int class_count = static_cast<int>(profile.recall.size());
    std::vector<Detection> raw;

    for (const auto& inst : gt.instances) {
        const auto cls = static_cast<std::size_t>(inst.class_id);
        const double recall = cls < profile.recall.size() ? profile.recall[cls] : 0.0;
        if (!(uniform01(rng) < recall)) continue;

        BBox box = inst.bbox;
        if (profile.sigma > 0.0) {
            box.cx += truncated_normal(rng, profile.sigma);
            box.cy += truncated_normal(rng, profile.sigma);
            box.w *= std::exp(truncated_normal(rng, profile.sigma));
            box.h *= std::exp(truncated_normal(rng, profile.sigma));
            box.cx = std::clamp(box.cx, 0.0, 1.0);
            box.cy = std::clamp(box.cy, 0.0, 1.0);
            try {
                box = clamp_to_frame(box).box;
            } catch (const GeometryError&) {
                continue;
            }
        }
        int label = inst.class_id;
        if (profile.confusion > 0.0 && class_count > 1 && uniform01(rng) < profile.confusion) {
            const auto shift = 1 + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(class_count - 1)));
            label = (label + shift) % class_count;
        }
        raw.push_back({box, label, sample_beta(rng, profile.tp_confidence), gt.camera, gt.image_id});
    }

    if (profile.fp_rate > 0.0) {
        std::poisson_distribution<int> count(profile.fp_rate);
        const int n = count(rng);
        for (int i = 0; i < n; ++i) {
            const double span = profile.fp_max_size - profile.fp_min_size;
            const double w = profile.fp_min_size + span * uniform01(rng);
            const double h = profile.fp_min_size + span * uniform01(rng);
            const double cx = w / 2.0 + (1.0 - w) * uniform01(rng);
            const double cy = h / 2.0 + (1.0 - h) * uniform01(rng);
            const int label = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(class_count)));
            raw.push_back({BBox{cx, cy, w, h}, label, sample_beta(rng, profile.fp_confidence), gt.camera,
                           gt.image_id});
        }
    }
    return nms(raw, profile.nms_threshold);
}

// ---------------------------------------------------------------------------
// backends

ReplayBackend ReplayBackend::from_directory(const fs::path& root, std::size_t class_count) {
    if (!fs::is_directory(root)) throw DatasetError("detection root '" + root.string() + "' is not a directory");
    ReplayBackend backend;
    for (const auto& cam_entry : fs::directory_iterator(root)) {
        if (!cam_entry.is_directory()) continue;
        const auto cam = parse_camera(cam_entry.path().filename().string());
        if (!cam) throw DatasetError("unknown camera directory '" + cam_entry.path().string() + "'");
        for (const auto& f : fs::directory_iterator(cam_entry.path())) {
            if (!f.is_regular_file() || f.path().extension() != ".txt") continue;
            const std::string id = std::string(to_string(*cam)) + "/" + f.path().stem().string();
            try {
                backend.insert(id, parse_detection_file(detail::read_file(f.path()), id, *cam, class_count));
            } catch (const ParseError& e) {
                throw ParseError(e.line(), f.path().string() + ": " + e.what());
            }
        }
    }
    return backend;
}

void ReplayBackend::insert(const std::string& image_id, std::vector<Detection> detections) {
    store_[image_id] = std::move(detections);
}

std::vector<Detection> ReplayBackend::detect(const ImageRef& image) const {
    const auto it = store_.find(image.image_id);
    if (it == store_.end()) throw LookupError("no stored detections for image '" + image.image_id + "'");
    return it->second;
}

SyntheticBackend::SyntheticBackend(const DatasetManifest& manifest,
                                   std::array<DetectorProfile, kCameraCount> profiles, std::uint64_t seed)
    : profiles_(std::move(profiles)), seed_(seed) {
    for (const auto& p : profiles_) p.validate();
    for (const auto& r : manifest.records) records_.emplace(r.image_id, r);
}

std::vector<Detection> SyntheticBackend::detect(const ImageRef& image) const {
    const auto it = records_.find(image.image_id);
    if (it == records_.end()) throw LookupError("unknown image '" + image.image_id + "'");
    return synth_detect(it->second, profiles_[index_of(it->second.camera)], seed_);
}

}  // namespace mvqc
