/**
 * @file geometry.hpp
 * @brief Pixel-space primitives: points, inclusive bounding boxes, sign regions.
 *
 * Coordinate convention throughout: origin top-left, x rightward, y downward,
 * integer pixel coordinates.
 */

#pragma once

#include <cstdint>
#include <vector>

namespace tsr {

struct Point {
    int x = 0;
    int y = 0;

    bool operator==(const Point&) const = default;
};

/// Inclusive pixel bounds.
struct BBox {
    int x_min = 0;
    int y_min = 0;
    int x_max = -1;
    int y_max = -1;

    bool operator==(const BBox&) const = default;

    int width() const { return x_max - x_min + 1; }
    int height() const { return y_max - y_min + 1; }
    long long area() const { return static_cast<long long>(width()) * height(); }
    bool valid() const { return x_max >= x_min && y_max >= y_min; }

    bool contains(Point p) const {
        return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
    }

    void expand_to(Point p) {
        if (!valid()) {
            x_min = x_max = p.x;
            y_min = y_max = p.y;
            return;
        }
        if (p.x < x_min) x_min = p.x;
        if (p.x > x_max) x_max = p.x;
        if (p.y < y_min) y_min = p.y;
        if (p.y > y_max) y_max = p.y;
    }

    /// Grown by pad on each side, then clipped to [0,w)x[0,h).
    BBox padded_clamped(int pad, int image_w, int image_h) const {
        BBox b;
        b.x_min = x_min - pad < 0 ? 0 : x_min - pad;
        b.y_min = y_min - pad < 0 ? 0 : y_min - pad;
        b.x_max = x_max + pad >= image_w ? image_w - 1 : x_max + pad;
        b.y_max = y_max + pad >= image_h ? image_h - 1 : y_max + pad;
        return b;
    }
};

/// Midpoint of inclusive bounds, rounded half-up. Coordinates are
/// non-negative, so (a + b + 1) / 2 implements the half-up rule exactly.
inline Point center_of(const BBox& b) {
    return Point{(b.x_min + b.x_max + 1) / 2, (b.y_min + b.y_max + 1) / 2};
}

/// A detected sign in road-image space.
struct SignRegion {
    BBox bbox;
    Point center;
    long long area_px = 0;

    bool operator==(const SignRegion&) const = default;
};

inline SignRegion make_region(const BBox& bbox, long long area_px) {
    return SignRegion{bbox, center_of(bbox), area_px};
}

inline long long intersection_area(const BBox& a, const BBox& b) {
    int x0 = a.x_min > b.x_min ? a.x_min : b.x_min;
    int y0 = a.y_min > b.y_min ? a.y_min : b.y_min;
    int x1 = a.x_max < b.x_max ? a.x_max : b.x_max;
    int y1 = a.y_max < b.y_max ? a.y_max : b.y_max;
    if (x1 < x0 || y1 < y0) return 0;
    return static_cast<long long>(x1 - x0 + 1) * (y1 - y0 + 1);
}

inline double iou(const BBox& a, const BBox& b) {
    long long inter = intersection_area(a, b);
    long long uni = a.area() + b.area() - inter;
    return uni <= 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Border pixel sequence. Closed: first and last entries are 8-adjacent
/// (trivially so for regions thinner than the tracer's step).
using Contour = std::vector<Point>;

inline BBox bbox_of(const Contour& contour) {
    BBox b;
    for (const Point& p : contour) b.expand_to(p);
    return b;
}

}  // namespace tsr
