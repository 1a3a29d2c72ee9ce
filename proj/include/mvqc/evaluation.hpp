#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvqc/dataset.hpp"
#include "mvqc/geometry.hpp"

namespace mvqc {

struct MatchPair {
    std::size_t detection;
    std::size_t gt;
    double iou;
};

struct MatchResult {
    std::vector<MatchPair> pairs;
    std::vector<std::size_t> unmatched_detections;  // false positives
    std::vector<std::size_t> unmatched_gt;          // false negatives
};

/// Greedy matching for one image and one class. Detections are visited by
/// descending confidence (ties in input order); each takes the unmatched GT of
/// highest IoU >= threshold, ties going to the lower GT index.
MatchResult match(std::span<const ScoredBox> detections, std::span<const BBox> gts,
                  double iou_threshold);

/// One pooled detection after matching.
struct RankedDetection {
    double confidence = 0.0;
    bool true_positive = false;
};

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
    double confidence = 0.0;
    std::size_t rank = 0;  // detections accepted, 1-based
    std::size_t true_positives = 0;
};

struct PrCurve {
    std::vector<PrPoint> points;
    std::size_t total_gt = 0;

    /// Without ground truth recall is undefined and so is AP.
    bool defined() const noexcept { return total_gt > 0; }
};

/// One point per detection rank, detections sorted by descending confidence
/// (stable). Empty when total_gt == 0.
PrCurve pr_curve(std::vector<RankedDetection> pooled, std::size_t total_gt);

inline constexpr int kRecallSamples = 101;

/// Interpolated AP: the precision envelope (max precision at recall >= r) is
/// sampled at r = 0.00, 0.01, ..., 1.00 and integrated with the trapezoid
/// rule. Absent when the curve has no ground truth.
std::optional<double> average_precision(const PrCurve& curve);

struct OperatingPoint {
    double precision = 0.0;
    double recall = 0.0;
    double confidence = 0.0;
    double f1 = 0.0;
    std::size_t rank = 0;
    std::size_t true_positives = 0;
};

/// Max-F1 point of the curve, ties going to the higher confidence.
std::optional<OperatingPoint> operating_point(const PrCurve& curve);

/// IoU thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_iou_thresholds();

struct EvalImage {
    std::vector<ScoredBox> detections;
    std::vector<GroundTruthInstance> ground_truth;
};

struct EvalConfig {
    std::vector<double> iou_thresholds = coco_iou_thresholds();
    std::vector<std::string> class_names = default_class_names();
};

struct ClassEval {
    std::string name;
    std::size_t total_gt = 0;
    std::vector<std::optional<double>> ap;  // per IoU threshold
    PrCurve curve;                          // at the first IoU threshold
    std::optional<OperatingPoint> op;
};

struct EvalCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

struct EvalReport {
    EvalConfig config;
    std::vector<ClassEval> classes;
    /// Mean AP over classes with ground truth, per threshold.
    std::vector<std::optional<double>> map_per_threshold;
    std::optional<double> map50;
    std::optional<double> map50_95;
    /// Max-F1 point over all classes pooled at the first threshold.
    std::optional<OperatingPoint> op;
    EvalCounts counts;  // at the operating point
    std::size_t images = 0;
    std::size_t detections = 0;
};

/// Class-exact matching per image, pooled PR curves, AP per class per
/// threshold and the mAP means.
EvalReport evaluate(std::span<const EvalImage> images, const EvalConfig& config = {});

std::string eval_report_to_json(const EvalReport& r);
/// Rows of "class,threshold,ap".
std::string eval_report_to_csv(const EvalReport& r);
/// Precision / Recall / mAP@50 / mAP@50-95 summary table.
std::string render_table(const EvalReport& r);

}  // namespace mvqc
