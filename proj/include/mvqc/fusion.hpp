#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mvqc/dataset.hpp"
#include "mvqc/detector.hpp"
#include "mvqc/geometry.hpp"

namespace mvqc {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

struct CameraView {
    BBox roi{0.5, 0.5, 1.0, 1.0};
    bool visible = false;

    friend bool operator==(const CameraView&, const CameraView&) = default;
};

struct Component {
    std::string id;
    std::array<CameraView, kCameraCount> views{};

    const CameraView& view(CameraId c) const noexcept { return views[index_of(c)]; }
    friend bool operator==(const Component&, const Component&) = default;
};

inline constexpr int kRegistryFormatVersion = 1;

/// Station map from physical fasteners to the image region each camera sees
/// them in.
class ComponentRegistry {
public:
    ComponentRegistry() = default;
    /// Throws ConfigError on duplicate ids, invisible components, or bad ROIs.
    explicit ComponentRegistry(std::vector<Component> components);

    const std::vector<Component>& components() const noexcept { return components_; }
    bool empty() const noexcept { return components_.empty(); }
    std::size_t size() const noexcept { return components_.size(); }

    friend bool operator==(const ComponentRegistry&, const ComponentRegistry&) = default;

private:
    std::vector<Component> components_;
};

std::string registry_to_json(const ComponentRegistry& r);
ComponentRegistry registry_from_json(std::string_view text);
ComponentRegistry load_registry(const std::filesystem::path& file);

enum class ViewState { Fastened, Loose, Undetected };
std::string_view to_string(ViewState s) noexcept;

/// Class 0 maps to Fastened, class 1 to Loose.
ViewState state_for_class(int class_id);

struct ViewVerdict {
    std::string component_id;
    CameraId camera = CameraId::Top;
    ViewState state = ViewState::Undetected;
    double confidence = 0.0;
    std::optional<std::size_t> detection;  // index into the associated detections
};

struct Superseded {
    std::size_t detection;
    std::string component_id;
};

struct Association {
    std::vector<ViewVerdict> verdicts;      // one per component visible in the camera
    std::vector<std::size_t> stray;         // detections matching no component
    std::vector<Superseded> superseded;     // lower-confidence duplicates
};

inline constexpr double kDefaultAssocIou = 0.3;

/// Assign one camera's detections to registered components by ROI overlap.
Association associate(CameraId camera, std::span<const Detection> detections,
                      const ComponentRegistry& registry, double assoc_iou_threshold = kDefaultAssocIou);

enum class FusionPolicy { DefectPriority, MajorityVote, ConfidenceWeighted };
std::string_view to_string(FusionPolicy p) noexcept;
std::optional<FusionPolicy> parse_policy(std::string_view s) noexcept;

struct FusedState {
    ViewState state = ViewState::Undetected;
    double confidence = 0.0;
};

/// Margin of summed confidence under which ConfidenceWeighted falls back to Loose.
inline constexpr double kWeightedMargin = 0.1;

/// Combine up to three per-camera verdicts for one component. The fused
/// confidence is the highest confidence among views reporting the fused state
/// (0 when none does). Throws ContractError on repeated cameras.
FusedState fuse_component(std::span<const ViewVerdict> verdicts, FusionPolicy policy);

enum class Overall { Pass, Fail, DegradedPass, DegradedFail };
std::string_view to_string(Overall o) noexcept;

struct ComponentOutcome {
    std::string component_id;
    FusedState fused;
    /// Loose, or Undetected while visible in at least one reporting camera.
    bool defect = false;
    std::vector<ViewVerdict> views;
};

struct AssemblyVerdict {
    std::string assembly_id;
    std::vector<ComponentOutcome> components;
    Overall overall = Overall::Pass;
    std::vector<CameraId> contributing;
    std::vector<CameraId> missing;
    FusionPolicy policy = FusionPolicy::DefectPriority;

    bool failed() const noexcept { return overall == Overall::Fail || overall == Overall::DegradedFail; }
    bool degraded() const noexcept {
        return overall == Overall::DegradedPass || overall == Overall::DegradedFail;
    }
};

/// Fuse every registered component. Verdicts from cameras listed in `missing`
/// are ignored.
AssemblyVerdict assembly_verdict(std::string assembly_id, std::span<const ViewVerdict> verdicts,
                                 const ComponentRegistry& registry, FusionPolicy policy,
                                 std::span<const CameraId> missing = {});

/// One JSON object (single line, no trailing newline).
std::string verdict_to_json_line(const AssemblyVerdict& v);

}  // namespace mvqc
