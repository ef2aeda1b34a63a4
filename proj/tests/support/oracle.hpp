// Independent flood-fill connected-components labeler used as the oracle for
// the contour-based extraction path. Keep free of any tracing code.

#pragma once

#include <deque>
#include <random>
#include <vector>

#include "tsr/geometry.hpp"
#include "tsr/image.hpp"

namespace tsr::test {

struct OracleComponent {
    BBox bbox;
    long long pixel_count = 0;
};

/// 8-connected components in raster order of their first-scanned pixel.
inline std::vector<OracleComponent> flood_fill_components(const BinaryMask& mask) {
    const int w = mask.width, h = mask.height;
    std::vector<uint8_t> visited(static_cast<size_t>(w) * h, 0);
    std::vector<OracleComponent> components;
    for (int sy = 0; sy < h; ++sy)
        for (int sx = 0; sx < w; ++sx) {
            size_t si = static_cast<size_t>(sy) * w + sx;
            if (!mask.bits[si] || visited[si]) continue;
            OracleComponent comp;
            std::deque<Point> queue{{sx, sy}};
            visited[si] = 1;
            while (!queue.empty()) {
                Point p = queue.front();
                queue.pop_front();
                comp.bbox.expand_to(p);
                ++comp.pixel_count;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        int nx = p.x + dx, ny = p.y + dy;
                        if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                        size_t ni = static_cast<size_t>(ny) * w + nx;
                        if (!mask.bits[ni] || visited[ni]) continue;
                        visited[ni] = 1;
                        queue.push_back({nx, ny});
                    }
            }
            components.push_back(comp);
        }
    return components;
}

/// Seeded random mask with roughly the given foreground density.
inline BinaryMask random_mask(std::mt19937& rng, int max_side, double density) {
    int w = 1 + static_cast<int>(rng() % static_cast<unsigned>(max_side));
    int h = 1 + static_cast<int>(rng() % static_cast<unsigned>(max_side));
    BinaryMask mask(w, h);
    const uint32_t threshold = static_cast<uint32_t>(density * 4294967295.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (rng() < threshold) mask.set(x, y, true);
    return mask;
}

}  // namespace tsr::test
