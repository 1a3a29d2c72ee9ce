#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mvqc/geometry.hpp"

namespace mvqc {

enum class CameraId : std::uint8_t { Top = 0, Middle = 1, Bottom = 2 };

inline constexpr std::array<CameraId, 3> kAllCameras{CameraId::Top, CameraId::Middle,
                                                    CameraId::Bottom};
inline constexpr std::size_t kCameraCount = kAllCameras.size();

constexpr std::size_t index_of(CameraId c) noexcept { return static_cast<std::size_t>(c); }

/// Lower-case directory name: "top", "middle", "bottom".
std::string_view to_string(CameraId c) noexcept;
std::optional<CameraId> parse_camera(std::string_view name) noexcept;

/// Binary taxonomy: class 0 is a properly fastened part, class 1 a loose one.
inline constexpr int kFastenedClass = 0;
inline constexpr int kLooseClass = 1;
std::vector<std::string> default_class_names();

/// A malformed label or detection line. Line numbers are 1-based.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what);
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class TaxonomyError : public std::runtime_error {
public:
    TaxonomyError(std::size_t line, int class_id, std::size_t class_count);
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Layout, schema, or I/O problem while building or loading a manifest.
class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SplitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GroundTruthInstance {
    int class_id = kFastenedClass;
    BBox bbox;

    friend bool operator==(const GroundTruthInstance&, const GroundTruthInstance&) = default;
};

struct AnnotationRecord {
    std::string image_id;
    CameraId camera = CameraId::Top;
    std::vector<GroundTruthInstance> instances;
    std::string image_path;  // relative to the dataset root

    friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

enum class SplitTag { Train, Val, Test, Unsplit };
std::string_view to_string(SplitTag t) noexcept;
std::optional<SplitTag> parse_split_tag(std::string_view s) noexcept;

inline constexpr int kManifestFormatVersion = 1;

struct DatasetManifest {
    std::vector<AnnotationRecord> records;
    SplitTag split = SplitTag::Unsplit;
    std::vector<std::string> class_names = default_class_names();
    std::vector<std::string> warnings;

    std::array<std::size_t, kCameraCount> camera_counts() const noexcept;
    const AnnotationRecord* find(std::string_view image_id) const noexcept;

    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Parse a YOLO label file ("class cx cy w h" per line). Overrunning boxes are
/// clamped and a warning is appended to `warnings` when given.
AnnotationRecord parse_label_file(std::string_view text, std::string image_id, CameraId camera,
                                  std::size_t class_count = 2,
                                  std::vector<std::string>* warnings = nullptr);

std::string write_label_file(const AnnotationRecord& record);

/// Scan `root/images/<camera>/*.{jpg,jpeg,png}` and `root/labels/<camera>/*.txt`.
/// Image ids are "<camera>/<stem>".
DatasetManifest build_manifest(const std::filesystem::path& root,
                               std::vector<std::string> class_names = default_class_names());

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(std::string_view text);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& file);
DatasetManifest load_manifest(const std::filesystem::path& file);

struct SplitRatios {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;
};

struct SplitResult {
    DatasetManifest train;
    DatasetManifest val;
    DatasetManifest test;
};

/// Per-stratum sizes: floor(n*train), floor(n*val), and the remainder to test.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios);

/// Camera-stratified shuffle split. Deterministic for a fixed seed and
/// independent of the input record order.
SplitResult stratified_split(const DatasetManifest& manifest, const SplitRatios& ratios,
                             std::uint64_t seed);

enum class IssueKind { DuplicateId, MissingImage };
std::string_view to_string(IssueKind k) noexcept;

struct ValidationIssue {
    IssueKind kind;
    std::string image_id;
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    std::size_t empty_label_count = 0;
    std::array<std::size_t, kCameraCount> camera_counts{};
    /// [camera][class] instance counts.
    std::array<std::vector<std::size_t>, kCameraCount> class_histograms;

    bool clean() const noexcept { return issues.empty(); }
};

/// Report-only checks. Image existence is checked against `root` when given.
ValidationReport validate(const DatasetManifest& manifest,
                          const std::optional<std::filesystem::path>& root = std::nullopt);

std::string report_to_json(const ValidationReport& report, const DatasetManifest& manifest);

}  // namespace mvqc
