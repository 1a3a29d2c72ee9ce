#include "mvqc/evaluation.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

namespace mvqc {

MatchResult match(std::span<const ScoredBox> detections, std::span<const BBox> gts,
                  double iou_threshold) {
    MatchResult out;
    std::vector<char> gt_taken(gts.size(), 0);
    for (std::size_t d : confidence_order(detections)) {
        std::optional<std::size_t> best;
        double best_iou = 0.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (gt_taken[g]) continue;
            const double v = iou(detections[d].bbox, gts[g]);
            if (v >= iou_threshold && (!best || v > best_iou)) {
                best = g;
                best_iou = v;
            }
        }
        if (best) {
            gt_taken[*best] = 1;
            out.pairs.push_back({d, *best, best_iou});
        } else {
            out.unmatched_detections.push_back(d);
        }
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
        if (!gt_taken[g]) out.unmatched_gt.push_back(g);
    }
    return out;
}

PrCurve pr_curve(std::vector<RankedDetection> pooled, std::size_t total_gt) {
    PrCurve curve;
    curve.total_gt = total_gt;
    if (total_gt == 0) return curve;
    std::stable_sort(pooled.begin(), pooled.end(),
                     [](const RankedDetection& a, const RankedDetection& b) { return a.confidence > b.confidence; });
    curve.points.reserve(pooled.size());
    std::size_t tp = 0;
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        if (pooled[i].true_positive) ++tp;
        const std::size_t rank = i + 1;
        curve.points.push_back({static_cast<double>(tp) / static_cast<double>(total_gt),
                                static_cast<double>(tp) / static_cast<double>(rank), pooled[i].confidence,
                                rank, tp});
    }
    return curve;
}

std::optional<double> average_precision(const PrCurve& curve) {
    if (!curve.defined()) return std::nullopt;
    const auto& pts = curve.points;
    // envelope[k] = max precision over points k..end
    std::vector<double> envelope(pts.size());
    double running = 0.0;
    for (std::size_t k = pts.size(); k-- > 0;) {
        running = std::max(running, pts[k].precision);
        envelope[k] = running;
    }
    double sum = 0.0;
    for (int j = 0; j < kRecallSamples; ++j) {
        const double r = static_cast<double>(j) / static_cast<double>(kRecallSamples - 1);
        const auto it = std::lower_bound(pts.begin(), pts.end(), r,
                                         [](const PrPoint& p, double v) { return p.recall < v; });
        const double y = it == pts.end() ? 0.0 : envelope[static_cast<std::size_t>(it - pts.begin())];
        const bool end_sample = j == 0 || j == kRecallSamples - 1;
        sum += end_sample ? y / 2.0 : y;
    }
    return sum / static_cast<double>(kRecallSamples - 1);
}

std::optional<OperatingPoint> operating_point(const PrCurve& curve) {
    std::optional<OperatingPoint> best;
    for (const auto& p : curve.points) {
        const double denom = p.precision + p.recall;
        const double f1 = denom > 0.0 ? 2.0 * p.precision * p.recall / denom : 0.0;
        if (!best || f1 > best->f1 || (f1 == best->f1 && p.confidence > best->confidence)) {
            best = OperatingPoint{p.precision, p.recall, p.confidence, f1, p.rank, p.true_positives};
        }
    }
    return best;
}

std::vector<double> coco_iou_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(static_cast<double>(50 + 5 * i) / 100.0);
    return t;
}

namespace {

/// Match one class in one image at one threshold; appends to `out`.
std::size_t rank_class(const EvalImage& img, int cls, double threshold, std::vector<RankedDetection>& out) {
    std::vector<ScoredBox> dets;
    std::vector<BBox> gts;
    for (const auto& d : img.detections) {
        if (d.class_id == cls) dets.push_back(d);
    }
    for (const auto& g : img.ground_truth) {
        if (g.class_id == cls) gts.push_back(g.bbox);
    }
    const MatchResult m = match(dets, gts, threshold);
    std::vector<char> tp(dets.size(), 0);
    for (const auto& p : m.pairs) tp[p.detection] = 1;
    for (std::size_t i = 0; i < dets.size(); ++i) out.push_back({dets[i].confidence, tp[i] != 0});
    return gts.size();
}

std::optional<double> mean_of_present(const std::vector<std::optional<double>>& values) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& v : values) {
        if (v) {
            sum += *v;
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

}  // namespace

EvalReport evaluate(std::span<const EvalImage> images, const EvalConfig& config) {
    if (config.iou_thresholds.empty()) throw std::invalid_argument("at least one IoU threshold is required");
    for (double t : config.iou_thresholds) check_iou_threshold(t);

    EvalReport rep;
    rep.config = config;
    rep.images = images.size();
    for (const auto& img : images) rep.detections += img.detections.size();

    const std::size_t n_thr = config.iou_thresholds.size();
    std::vector<RankedDetection> pooled_all;
    std::size_t gt_all = 0;

    for (std::size_t c = 0; c < config.class_names.size(); ++c) {
        const int cls = static_cast<int>(c);
        ClassEval ce;
        ce.name = config.class_names[c];
        for (std::size_t t = 0; t < n_thr; ++t) {
            std::vector<RankedDetection> ranked;
            std::size_t total_gt = 0;
            for (const auto& img : images) total_gt += rank_class(img, cls, config.iou_thresholds[t], ranked);
            if (t == 0) {
                pooled_all.insert(pooled_all.end(), ranked.begin(), ranked.end());
                gt_all += total_gt;
            }
            PrCurve curve = pr_curve(std::move(ranked), total_gt);
            ce.ap.push_back(average_precision(curve));
            if (t == 0) {
                ce.total_gt = total_gt;
                ce.op = operating_point(curve);
                ce.curve = std::move(curve);
            }
        }
        rep.classes.push_back(std::move(ce));
    }

    for (std::size_t t = 0; t < n_thr; ++t) {
        std::vector<std::optional<double>> per_class;
        for (const auto& ce : rep.classes) per_class.push_back(ce.ap[t]);
        rep.map_per_threshold.push_back(mean_of_present(per_class));
    }
    for (std::size_t t = 0; t < n_thr; ++t) {
        if (config.iou_thresholds[t] == 0.5) rep.map50 = rep.map_per_threshold[t];
    }
    if (std::all_of(rep.map_per_threshold.begin(), rep.map_per_threshold.end(),
                    [](const auto& v) { return v.has_value(); })) {
        rep.map50_95 = mean_of_present(rep.map_per_threshold);
    }

    const PrCurve pooled_curve = pr_curve(pooled_all, gt_all);
    rep.op = operating_point(pooled_curve);
    if (rep.op) {
        rep.counts.tp = rep.op->true_positives;
        rep.counts.fp = rep.op->rank - rep.op->true_positives;
        rep.counts.fn = gt_all - rep.op->true_positives;
    } else {
        rep.counts.fn = gt_all;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// output

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json op_json(const std::optional<OperatingPoint>& op) {
    if (!op) return nullptr;
    return {{"precision", op->precision}, {"recall", op->recall}, {"confidence", op->confidence},
            {"f1", op->f1}};
}

std::string fmt_metric(const std::optional<double>& v) { return v ? fmt::format("{:.3f}", *v) : "n/a"; }

}  // namespace

std::string eval_report_to_json(const EvalReport& r) {
    using nlohmann::json;
    json j;
    j["config"] = {{"iou_thresholds", r.config.iou_thresholds},
                   {"class_names", r.config.class_names},
                   {"interpolation", "101-point envelope, trapezoid"},
                   {"operating_point_rule", "max F1"}};
    j["images"] = r.images;
    j["detections"] = r.detections;
    j["map50"] = optional_json(r.map50);
    j["map50_95"] = optional_json(r.map50_95);
    j["map_per_threshold"] = json::array();
    for (const auto& v : r.map_per_threshold) j["map_per_threshold"].push_back(optional_json(v));
    j["operating_point"] = op_json(r.op);
    j["counts"] = {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}};
    j["classes"] = json::array();
    for (const auto& ce : r.classes) {
        json jc;
        jc["name"] = ce.name;
        jc["total_gt"] = ce.total_gt;
        jc["ap"] = json::array();
        for (const auto& v : ce.ap) jc["ap"].push_back(optional_json(v));
        jc["operating_point"] = op_json(ce.op);
        jc["pr_curve"] = json::array();
        for (const auto& p : ce.curve.points) {
            jc["pr_curve"].push_back({p.recall, p.precision, p.confidence});
        }
        j["classes"].push_back(std::move(jc));
    }
    return j.dump(2) + "\n";
}

std::string eval_report_to_csv(const EvalReport& r) {
    std::string out = "class,threshold,ap\n";
    for (const auto& ce : r.classes) {
        for (std::size_t t = 0; t < ce.ap.size(); ++t) {
            out += fmt::format("{},{:.2f},{}\n", ce.name, r.config.iou_thresholds[t],
                               ce.ap[t] ? fmt::format("{:.6f}", *ce.ap[t]) : std::string{});
        }
    }
    return out;
}

std::string render_table(const EvalReport& r) {
    const auto p = r.op ? std::optional<double>(r.op->precision) : std::nullopt;
    const auto rc = r.op ? std::optional<double>(r.op->recall) : std::nullopt;
    std::string out;
    out += fmt::format("| {:>9} | {:>9} | {:>9} | {:>9} |\n", "Precision", "Recall", "mAP@50", "mAP@50-95");
    out += fmt::format("| {:>9} | {:>9} | {:>9} | {:>9} |\n", fmt_metric(p), fmt_metric(rc),
                       fmt_metric(r.map50), fmt_metric(r.map50_95));
    return out;
}

}  // namespace mvqc
