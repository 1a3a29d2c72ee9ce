#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace mvqc {

/// Normalized, center-format axis-aligned box (YOLO label convention).
struct BBox {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    friend bool operator==(const BBox&, const BBox&) = default;
};

/// Corner-format view of a box, used internally for overlap arithmetic.
struct Corners {
    double x1, y1, x2, y2;
};

constexpr Corners to_corners(const BBox& b) noexcept {
    return {b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0};
}

constexpr BBox from_corners(const Corners& c) noexcept {
    return {(c.x1 + c.x2) / 2.0, (c.y1 + c.y2) / 2.0, c.x2 - c.x1, c.y2 - c.y1};
}

class GeometryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Overruns smaller than this are treated as inside the frame.
inline constexpr double kFrameTolerance = 1e-9;

/// True when w and h are positive and finite and the center lies in the frame.
bool is_valid(const BBox& b) noexcept;

struct ClampResult {
    BBox box;
    bool clamped = false;
};

/// Clip a box's extent to [0,1]^2. Throws GeometryError if the box is
/// degenerate before or after clipping.
ClampResult clamp_to_frame(const BBox& b);

/// w * h.
inline double area(const BBox& b) noexcept { return b.w * b.h; }

/// Intersection over union with open intersection: boxes that only share an
/// edge score exactly 0, identical boxes score exactly 1.
double iou(const BBox& a, const BBox& b) noexcept;

/// Anything carrying a box, a confidence, and a class label.
template <class T>
concept ScoredDetection = requires(const T& t) {
    { t.bbox } -> std::convertible_to<BBox>;
    { t.confidence } -> std::convertible_to<double>;
    { t.class_id } -> std::convertible_to<int>;
};

struct ScoredBox {
    BBox bbox;
    double confidence = 0.0;
    int class_id = 0;

    friend bool operator==(const ScoredBox&, const ScoredBox&) = default;
};

/// Indices of the items ordered by non-increasing confidence, ties kept in
/// input order.
template <ScoredDetection T>
std::vector<std::size_t> confidence_order(std::span<const T> items) {
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return items[a].confidence > items[b].confidence;
    });
    return order;
}

inline void check_iou_threshold(double t) {
    if (!(t > 0.0 && t <= 1.0)) {
        throw GeometryError("iou threshold must lie in (0, 1]");
    }
}

/// Greedy class-wise non-maximum suppression. Returns indices of survivors in
/// output order (non-increasing confidence, ties by input index).
template <ScoredDetection T>
std::vector<std::size_t> nms_indices(std::span<const T> items, double iou_threshold) {
    check_iou_threshold(iou_threshold);
    const auto order = confidence_order(items);
    std::vector<char> suppressed(items.size(), 0);
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const std::size_t cur = order[i];
        if (suppressed[cur]) continue;
        kept.push_back(cur);
        for (std::size_t j = i + 1; j < order.size(); ++j) {
            const std::size_t other = order[j];
            if (suppressed[other] || items[other].class_id != items[cur].class_id) continue;
            if (iou(items[cur].bbox, items[other].bbox) > iou_threshold) suppressed[other] = 1;
        }
    }
    return kept;
}

template <ScoredDetection T>
std::vector<T> nms(std::span<const T> items, double iou_threshold) {
    std::vector<T> out;
    for (std::size_t idx : nms_indices(items, iou_threshold)) out.push_back(items[idx]);
    return out;
}

template <ScoredDetection T>
std::vector<T> nms(const std::vector<T>& items, double iou_threshold) {
    return nms(std::span<const T>(items), iou_threshold);
}

}  // namespace mvqc
