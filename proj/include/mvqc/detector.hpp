#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mvqc/dataset.hpp"
#include "mvqc/geometry.hpp"

namespace mvqc {

struct Detection {
    BBox bbox;
    int class_id = 0;
    double confidence = 0.0;
    CameraId camera = CameraId::Top;
    std::string image_id;

    friend bool operator==(const Detection&, const Detection&) = default;
};

static_assert(ScoredDetection<Detection>);

/// The image a backend is asked to look at.
struct ImageRef {
    std::string image_id;
    CameraId camera = CameraId::Top;
};

class LookupError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

class ProfileError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::vector<Detection> parse_detection_file(std::string_view text, const std::string& image_id,
                                            CameraId camera, std::size_t class_count = 2);
std::string write_detection_file(std::span<const Detection> detections);

/// Beta(alpha, beta) shape for confidence sampling.
struct BetaShape {
    double alpha = 1.0;
    double beta = 1.0;

    double mean() const noexcept { return alpha / (alpha + beta); }
    friend bool operator==(const BetaShape&, const BetaShape&) = default;
};

/// Statistical model of one camera's detector.
struct DetectorProfile {
    std::vector<double> recall{1.0, 1.0};  // per class
    double fp_rate = 0.0;                  // mean false positives per image (Poisson)
    double sigma = 0.0;                    // localization noise, normalized units
    double confusion = 0.0;                // probability a kept instance changes class
    BetaShape tp_confidence{9.0, 1.0};     // mean 0.9
    BetaShape fp_confidence{2.0, 3.0};     // mean 0.4
    double fp_min_size = 0.02;             // side lengths of false-positive boxes
    double fp_max_size = 0.15;
    double nms_threshold = 0.7;
    /// Instance density the fp_rate was derived from; informational.
    double assumed_instances_per_image = 0.0;

    /// Throws ProfileError when a field is out of range.
    void validate() const;

    friend bool operator==(const DetectorProfile&, const DetectorProfile&) = default;
};

inline constexpr int kProfileFormatVersion = 1;

std::string profile_to_json(const DetectorProfile& p);
DetectorProfile profile_from_json(std::string_view text);
DetectorProfile load_profile(const std::filesystem::path& file);

/// Presets calibrated to the per-camera test operating points
/// (precision, recall): Top (0.900, 0.987), Middle (0.971, 0.241),
/// Bottom (0.866, 0.658), assuming four instances per image.
DetectorProfile preset_profile(CameraId camera);

/// Perturb ground truth into detections. Deterministic in (gt, profile, seed);
/// the random stream is keyed by the record's image id.
std::vector<Detection> synth_detect(const AnnotationRecord& gt, const DetectorProfile& profile,
                                    std::uint64_t seed);

class DetectorBackend {
public:
    virtual ~DetectorBackend() = default;
    /// Detections for one view. Throws LookupError for unknown images.
    virtual std::vector<Detection> detect(const ImageRef& image) const = 0;
};

/// Serves precomputed detection files verbatim.
class ReplayBackend final : public DetectorBackend {
public:
    ReplayBackend() = default;

    /// Loads every `<root>/<camera>/<stem>.txt`; image ids are "<camera>/<stem>".
    static ReplayBackend from_directory(const std::filesystem::path& root,
                                        std::size_t class_count = 2);

    void insert(const std::string& image_id, std::vector<Detection> detections);
    std::size_t size() const noexcept { return store_.size(); }

    std::vector<Detection> detect(const ImageRef& image) const override;

private:
    std::map<std::string, std::vector<Detection>, std::less<>> store_;
};

class SyntheticBackend final : public DetectorBackend {
public:
    SyntheticBackend(const DatasetManifest& manifest, std::array<DetectorProfile, kCameraCount> profiles,
                     std::uint64_t seed);

    std::vector<Detection> detect(const ImageRef& image) const override;

    const DetectorProfile& profile(CameraId c) const noexcept { return profiles_[index_of(c)]; }

private:
    std::map<std::string, AnnotationRecord, std::less<>> records_;
    std::array<DetectorProfile, kCameraCount> profiles_;
    std::uint64_t seed_;
};

}  // namespace mvqc
