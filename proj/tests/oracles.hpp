#pragma once

// Reference implementations used only by tests. They are written without
// calling into the library under test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

namespace oracle {

struct Box {
    double cx, cy, w, h;
};

/// Pixel centers (i + 0.5) / n with i in [0, n) that fall inside [lo, hi).
inline std::int64_t centers_in(double lo, double hi, std::int64_t n) {
    const auto first = static_cast<std::int64_t>(std::ceil(lo * static_cast<double>(n) - 0.5));
    const auto last = static_cast<std::int64_t>(std::ceil(hi * static_cast<double>(n) - 0.5));  // exclusive
    return std::max<std::int64_t>(0, std::min(last, n) - std::max<std::int64_t>(first, 0));
}

/// IoU by counting covered pixel centers on an n x n raster. Axis-aligned
/// boxes make the count separable, so the full grid is never materialized.
inline double raster_iou(const Box& a, const Box& b, std::int64_t n = 10000) {
    const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2, ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
    const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2, by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
    const double pa = static_cast<double>(centers_in(ax1, ax2, n) * centers_in(ay1, ay2, n));
    const double pb = static_cast<double>(centers_in(bx1, bx2, n) * centers_in(by1, by2, n));
    const double pi = static_cast<double>(centers_in(std::max(ax1, bx1), std::min(ax2, bx2), n) *
                                          centers_in(std::max(ay1, by1), std::min(ay2, by2), n));
    const double uni = pa + pb - pi;
    return uni > 0 ? pi / uni : 0.0;
}

inline double plain_iou(const Box& a, const Box& b) {
    const double iw = std::min(a.cx + a.w / 2, b.cx + b.w / 2) - std::max(a.cx - a.w / 2, b.cx - b.w / 2);
    const double ih = std::min(a.cy + a.h / 2, b.cy + b.h / 2) - std::max(a.cy - a.h / 2, b.cy - b.h / 2);
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.w * a.h + b.w * b.h - inter);
}

struct Det {
    Box box;
    double conf;
};

struct Image {
    std::vector<Det> dets;
    std::vector<Box> gts;
};

/// Single-class AP: greedy matching per image (confidence order, ties by
/// input index; best IoU, ties by lower GT index), pooled ranking, then the
/// precision envelope read off at recall j/100 and integrated with the
/// trapezoid rule. Returns -1 when there is no ground truth.
inline double brute_ap(const std::vector<Image>& images, double thr) {
    struct Ranked {
        double conf;
        std::size_t image, index;
        bool tp;
    };
    std::vector<Ranked> all;
    std::size_t total_gt = 0;
    for (std::size_t im = 0; im < images.size(); ++im) {
        const auto& img = images[im];
        total_gt += img.gts.size();
        std::vector<std::size_t> order(img.dets.size());
        std::iota(order.begin(), order.end(), 0);
        // insertion sort: descending confidence, earlier index first on ties
        for (std::size_t i = 1; i < order.size(); ++i) {
            for (std::size_t j = i; j > 0; --j) {
                const auto& x = img.dets[order[j]];
                const auto& y = img.dets[order[j - 1]];
                if (x.conf > y.conf || (x.conf == y.conf && order[j] < order[j - 1])) {
                    std::swap(order[j], order[j - 1]);
                } else {
                    break;
                }
            }
        }
        std::vector<bool> used(img.gts.size(), false);
        std::vector<bool> tp(img.dets.size(), false);
        for (std::size_t d : order) {
            long best = -1;
            double best_iou = -1;
            for (std::size_t g = 0; g < img.gts.size(); ++g) {
                if (used[g]) continue;
                const double v = plain_iou(img.dets[d].box, img.gts[g]);
                if (v >= thr && v > best_iou) {
                    best = static_cast<long>(g);
                    best_iou = v;
                }
            }
            if (best >= 0) {
                used[static_cast<std::size_t>(best)] = true;
                tp[d] = true;
            }
        }
        for (std::size_t d = 0; d < img.dets.size(); ++d) all.push_back({img.dets[d].conf, im, d, tp[d]});
    }
    if (total_gt == 0) return -1.0;
    std::sort(all.begin(), all.end(), [](const Ranked& a, const Ranked& b) {
        if (a.conf != b.conf) return a.conf > b.conf;
        if (a.image != b.image) return a.image < b.image;
        return a.index < b.index;
    });
    std::vector<std::size_t> cum_tp;
    std::size_t tp = 0;
    for (const auto& r : all) cum_tp.push_back(tp += r.tp ? 1 : 0);

    double sum = 0.0;
    for (std::size_t j = 0; j <= 100; ++j) {
        // exact integer test for recall_k >= j/100
        double env = 0.0;
        for (std::size_t k = 0; k < cum_tp.size(); ++k) {
            if (cum_tp[k] * 100 >= j * total_gt) {
                env = std::max(env, static_cast<double>(cum_tp[k]) / static_cast<double>(k + 1));
            }
        }
        sum += (j == 0 || j == 100) ? env / 2 : env;
    }
    return sum / 100.0;
}

inline double log_binom_pmf(std::size_t n, std::size_t k, double p) {
    const double dn = static_cast<double>(n), dk = static_cast<double>(k);
    return std::lgamma(dn + 1) - std::lgamma(dk + 1) - std::lgamma(dn - dk + 1) + dk * std::log(p) +
           (dn - dk) * std::log1p(-p);
}

/// Central acceptance region for Binomial(n, p): the smallest [lo, hi] with
/// P(X < lo) <= alpha/2 and P(X > hi) <= alpha/2.
inline std::pair<std::size_t, std::size_t> binomial_interval(std::size_t n, double p, double level = 0.99) {
    const double tail = (1.0 - level) / 2.0;
    std::vector<double> pmf(n + 1);
    for (std::size_t k = 0; k <= n; ++k) pmf[k] = std::exp(log_binom_pmf(n, k, p));
    std::size_t lo = 0;
    double below = 0.0;
    while (lo < n && below + pmf[lo] <= tail) below += pmf[lo++];
    std::size_t hi = n;
    double above = 0.0;
    while (hi > 0 && above + pmf[hi] <= tail) above += pmf[hi--];
    return {lo, hi};
}

}  // namespace oracle
