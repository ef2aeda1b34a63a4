/**
 * @file extraction.hpp
 * @brief Sign extraction from road images and color-coded segmentation masks.
 *
 * The stages, in pipeline order:
 *   binarize_mask      color-coded label image -> binary foreground bitmap
 *   trace_contours     border following (Suzuki-Abe), outer borders only
 *   regions_from_contours  bounding boxes, centers, filled areas
 *   fill_holes + compose_foreground  background-removed composite
 *   crop_sign          padded, clamped sign patches
 */

#pragma once

#include <deque>
#include <map>
#include <string>
#include <vector>

#include "tsr/error.hpp"
#include "tsr/geometry.hpp"
#include "tsr/image.hpp"

namespace tsr::extraction {

/// Color-coded segmentation image plus the label -> color legend.
struct MaskImage {
    Image image;
    std::map<std::string, Rgb> class_color_map;
};

inline std::map<std::string, Rgb> default_color_map() {
    return {{"traffic_sign", Rgb{220, 220, 0}}};
}

struct ExtractionOptions {
    std::string mask_label = "traffic_sign";
    int color_tolerance = 0;  // exact match by default; masks are label images
    long long min_area = 64;
    int padding = 4;
    Rgb fill = Rgb{0, 0, 0};
};

/// Foreground = pixels whose color matches the label's legend color within
/// tolerance (per channel, default exact).
inline BinaryMask binarize_mask(const MaskImage& mask, const std::string& label,
                                int tolerance = 0) {
    auto it = mask.class_color_map.find(label);
    if (it == mask.class_color_map.end())
        raise(ErrorCode::UnknownLabel, label);
    const Rgb want = it->second;
    const Image& img = mask.image;
    BinaryMask out(img.width, img.height);
    auto near = [&](int a, int b) { return a - b <= tolerance && b - a <= tolerance; };
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            Rgb c = img.at(x, y);
            bool fg = near(c.r, want.r) && near(c.g, want.g) && near(c.b, want.b);
            if (fg) out.set(x, y, true);
        }
    return out;
}

namespace detail {

// Clockwise 8-neighborhood in image coordinates (y down), starting east.
inline constexpr int kDx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
inline constexpr int kDy[8] = {0, 1, 1, 1, 0, -1, -1, -1};

inline int direction_to(Point from, Point to) {
    for (int d = 0; d < 8; ++d)
        if (from.x + kDx[d] == to.x && from.y + kDy[d] == to.y) return d;
    return -1;
}

}  // namespace detail

/**
 * Border following over the binary mask. Emits one outer contour per
 * 8-connected foreground component, in raster order of each component's
 * topmost-leftmost pixel. Hole borders are followed (their pixels must be
 * marked so they cannot restart a trace) but not emitted.
 */
inline std::vector<Contour> trace_contours(const BinaryMask& mask) {
    const int w = mask.width, h = mask.height;
    std::vector<Contour> contours;
    if (w <= 0 || h <= 0) return contours;

    // f-values: 0 background, 1 unvisited foreground, +/-NBD visited borders.
    std::vector<int> f(static_cast<size_t>(w) * h, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.get(x, y)) f[static_cast<size_t>(y) * w + x] = 1;

    auto fv = [&](int x, int y) -> int& { return f[static_cast<size_t>(y) * w + x]; };
    auto fg = [&](int x, int y) { return x >= 0 && x < w && y >= 0 && y < h && fv(x, y) != 0; };

    int nbd = 1;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (fv(x, y) == 0) continue;
            bool outer = fv(x, y) == 1 && !fg(x - 1, y);
            bool hole = !outer && fv(x, y) >= 1 && !fg(x + 1, y);
            if (!outer && !hole) continue;
            ++nbd;

            Point p0{x, y};
            Point from = outer ? Point{x - 1, y} : Point{x + 1, y};
            Contour contour;
            contour.push_back(p0);

            // Find the first foreground neighbor clockwise from `from`.
            int start_dir = detail::direction_to(p0, from);
            Point p1{-1, -1};
            for (int k = 1; k <= 8; ++k) {
                int d = (start_dir + k) % 8;
                Point q{p0.x + detail::kDx[d], p0.y + detail::kDy[d]};
                if (fg(q.x, q.y)) {
                    p1 = q;
                    break;
                }
            }
            if (p1.x < 0) {
                fv(p0.x, p0.y) = -nbd;  // isolated pixel
                if (outer) contours.push_back(std::move(contour));
                continue;
            }

            Point p2 = p1;  // previously visited border pixel
            Point p3 = p0;  // current border pixel
            while (true) {
                // Counterclockwise scan around p3 starting just after p2,
                // remembering whether the east neighbor was seen as background.
                int d2 = detail::direction_to(p3, p2);
                bool east_was_background = false;
                Point p4{-1, -1};
                for (int k = 1; k <= 8; ++k) {
                    int d = (d2 + 8 - k) % 8;
                    Point q{p3.x + detail::kDx[d], p3.y + detail::kDy[d]};
                    if (fg(q.x, q.y)) {
                        p4 = q;
                        break;
                    }
                    if (d == 0) east_was_background = true;
                }
                if (east_was_background)
                    fv(p3.x, p3.y) = -nbd;
                else if (fv(p3.x, p3.y) == 1)
                    fv(p3.x, p3.y) = nbd;

                if (p4 == p0 && p3 == p1) break;  // back to the start configuration
                p2 = p3;
                p3 = p4;
                contour.push_back(p3);
            }
            if (outer) contours.push_back(std::move(contour));
        }
    }
    return contours;
}

/// Pixel count enclosed by the contour, holes included: the bounding box
/// minus whatever a 4-connected outside fill can reach without crossing
/// border pixels.
inline long long filled_contour_area(const Contour& contour) {
    if (contour.empty()) return 0;
    BBox b = bbox_of(contour);
    const int bw = b.width(), bh = b.height();
    const int gw = bw + 2, gh = bh + 2;  // one-cell frame around the bbox
    std::vector<uint8_t> grid(static_cast<size_t>(gw) * gh, 0);  // 1 = border pixel
    for (const Point& p : contour)
        grid[static_cast<size_t>(p.y - b.y_min + 1) * gw + (p.x - b.x_min + 1)] = 1;

    std::vector<uint8_t> reached(grid.size(), 0);
    std::deque<int> queue;
    queue.push_back(0);
    reached[0] = 1;
    while (!queue.empty()) {
        int idx = queue.front();
        queue.pop_front();
        int cx = idx % gw, cy = idx / gw;
        const int nx[4] = {cx + 1, cx - 1, cx, cx};
        const int ny[4] = {cy, cy, cy + 1, cy - 1};
        for (int k = 0; k < 4; ++k) {
            if (nx[k] < 0 || nx[k] >= gw || ny[k] < 0 || ny[k] >= gh) continue;
            int ni = ny[k] * gw + nx[k];
            if (reached[ni] || grid[ni]) continue;
            reached[ni] = 1;
            queue.push_back(ni);
        }
    }
    long long outside = 0;
    for (int cy = 1; cy <= bh; ++cy)
        for (int cx = 1; cx <= bw; ++cx)
            if (reached[static_cast<size_t>(cy) * gw + cx]) ++outside;
    return static_cast<long long>(bw) * bh - outside;
}

/// Bounding box, half-up-rounded center, and filled area per contour.
/// Contours whose filled area is below min_area are dropped.
inline std::vector<SignRegion> regions_from_contours(const std::vector<Contour>& contours,
                                                     long long min_area) {
    std::vector<SignRegion> regions;
    for (const Contour& contour : contours) {
        if (contour.empty()) continue;
        long long area = filled_contour_area(contour);
        if (area < min_area) continue;
        regions.push_back(make_region(bbox_of(contour), area));
    }
    return regions;
}

/// Enclosed background becomes foreground, so ring-style signs keep their
/// interiors when composited.
inline BinaryMask fill_holes(const BinaryMask& mask) {
    const int w = mask.width, h = mask.height;
    BinaryMask out = mask;
    if (w <= 0 || h <= 0) return out;
    std::vector<uint8_t> outside(static_cast<size_t>(w) * h, 0);
    std::deque<int> queue;
    auto push = [&](int x, int y) {
        if (x < 0 || x >= w || y < 0 || y >= h) return;
        size_t i = static_cast<size_t>(y) * w + x;
        if (outside[i] || mask.bits[i]) return;
        outside[i] = 1;
        queue.push_back(static_cast<int>(i));
    };
    for (int x = 0; x < w; ++x) {
        push(x, 0);
        push(x, h - 1);
    }
    for (int y = 0; y < h; ++y) {
        push(0, y);
        push(w - 1, y);
    }
    while (!queue.empty()) {
        int i = queue.front();
        queue.pop_front();
        int x = i % w, y = i / w;
        push(x + 1, y);
        push(x - 1, y);
        push(x, y + 1);
        push(x, y - 1);
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (!mask.get(x, y) && !outside[static_cast<size_t>(y) * w + x]) out.set(x, y, true);
    return out;
}

/// Pixelwise select: road where foreground, fill elsewhere.
inline Image compose_foreground(const Image& road, const BinaryMask& mask, Rgb fill) {
    if (road.width != mask.width || road.height != mask.height)
        raise(ErrorCode::DimensionMismatch, "road vs mask dimensions");
    Image out(road.width, road.height);
    for (int y = 0; y < road.height; ++y)
        for (int x = 0; x < road.width; ++x)
            out.set(x, y, mask.get(x, y) ? road.at(x, y) : fill);
    return out;
}

/// One extracted sign patch with its provenance.
struct SignCrop {
    Image patch;
    std::string image_id;
    SignRegion region;
};

/// Bbox expanded by `padding` on each side, clamped at image borders.
inline SignCrop crop_sign(const Image& composite, const SignRegion& region, int padding,
                          const std::string& image_id = "") {
    const BBox& b = region.bbox;
    if (b.x_min < 0 || b.y_min < 0 || b.x_max >= composite.width || b.y_max >= composite.height ||
        !b.valid())
        raise(ErrorCode::RegionOutOfBounds, "region bbox outside composite image");
    BBox padded = b.padded_clamped(padding, composite.width, composite.height);
    return SignCrop{composite.crop(padded), image_id, region};
}

struct ExtractionResult {
    std::vector<SignRegion> regions;
    Image composite;
    std::vector<SignCrop> crops;
};

/// Full extraction for one road image + mask pair.
inline ExtractionResult extract_signs(const Image& road, const MaskImage& mask,
                                      const ExtractionOptions& opts,
                                      const std::string& image_id = "") {
    if (road.width != mask.image.width || road.height != mask.image.height)
        raise(ErrorCode::DimensionMismatch, "road vs mask dimensions for " + image_id);
    BinaryMask binary = binarize_mask(mask, opts.mask_label, opts.color_tolerance);
    std::vector<Contour> contours = trace_contours(binary);
    ExtractionResult result;
    result.regions = regions_from_contours(contours, opts.min_area);
    result.composite = compose_foreground(road, fill_holes(binary), opts.fill);
    result.crops.reserve(result.regions.size());
    for (const SignRegion& region : result.regions)
        result.crops.push_back(crop_sign(result.composite, region, opts.padding, image_id));
    return result;
}

}  // namespace tsr::extraction
