#include "mvqc/geometry.hpp"

#include <cmath>

namespace mvqc {

bool is_valid(const BBox& b) noexcept {
    const bool finite = std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.w) &&
                        std::isfinite(b.h);
    return finite && b.w > 0.0 && b.h > 0.0 && b.cx >= 0.0 && b.cx <= 1.0 && b.cy >= 0.0 &&
           b.cy <= 1.0;
}

ClampResult clamp_to_frame(const BBox& b) {
    if (!(std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.w) && std::isfinite(b.h))) {
        throw GeometryError("box has non-finite coordinates");
    }
    if (!(b.w > 0.0 && b.h > 0.0)) {
        throw GeometryError("degenerate box (non-positive width or height)");
    }
    Corners c = to_corners(b);
    bool clamped = false;
    if (c.x1 < -kFrameTolerance) { c.x1 = 0.0; clamped = true; }
    if (c.y1 < -kFrameTolerance) { c.y1 = 0.0; clamped = true; }
    if (c.x2 > 1.0 + kFrameTolerance) { c.x2 = 1.0; clamped = true; }
    if (c.y2 > 1.0 + kFrameTolerance) { c.y2 = 1.0; clamped = true; }
    if (!clamped) return {b, false};
    if (!(c.x2 > c.x1 && c.y2 > c.y1)) {
        throw GeometryError("box lies entirely outside the frame");
    }
    return {from_corners(c), true};
}

double iou(const BBox& a, const BBox& b) noexcept {
    const Corners ca = to_corners(a);
    const Corners cb = to_corners(b);
    const double iw = std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1);
    const double ih = std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    // Areas from the same corner arithmetic so identical boxes give exactly 1.
    const double area_a = (ca.x2 - ca.x1) * (ca.y2 - ca.y1);
    const double area_b = (cb.x2 - cb.x1) * (cb.y2 - cb.y1);
    const double inter = iw * ih;
    const double uni = area_a + area_b - inter;
    if (uni <= 0.0) return 0.0;
    return std::min(1.0, inter / uni);
}

}  // namespace mvqc
