/**
 * @file image.hpp
 * @brief In-memory RGB8 image and binary bitmap types.
 *
 * Codec-free on purpose; file I/O lives in image_io.hpp.
 */

#pragma once

#include <cstdint>
#include <vector>

#include "tsr/error.hpp"
#include "tsr/geometry.hpp"

namespace tsr {

struct Rgb {
    uint8_t r = 0;
    uint8_t g = 0;
    uint8_t b = 0;

    bool operator==(const Rgb&) const = default;
};

/// Row-major interleaved RGB, 3 bytes per pixel.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> data;

    Image() = default;
    Image(int w, int h, Rgb fill = Rgb{}) : width(w), height(h), data(static_cast<size_t>(w) * h * 3) {
        if (!(fill == Rgb{})) this->fill(fill);
    }

    bool operator==(const Image&) const = default;

    bool empty() const { return width <= 0 || height <= 0; }
    size_t index(int x, int y) const { return (static_cast<size_t>(y) * width + x) * 3; }

    Rgb at(int x, int y) const {
        size_t i = index(x, y);
        return Rgb{data[i], data[i + 1], data[i + 2]};
    }

    void set(int x, int y, Rgb c) {
        size_t i = index(x, y);
        data[i] = c.r;
        data[i + 1] = c.g;
        data[i + 2] = c.b;
    }

    void fill(Rgb c) {
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) set(x, y, c);
    }

    void fill_rect(const BBox& b, Rgb c) {
        for (int y = b.y_min; y <= b.y_max; ++y)
            for (int x = b.x_min; x <= b.x_max; ++x)
                if (x >= 0 && x < width && y >= 0 && y < height) set(x, y, c);
    }

    /// Copy of the inclusive bbox; bbox must lie inside the image.
    Image crop(const BBox& b) const {
        if (b.x_min < 0 || b.y_min < 0 || b.x_max >= width || b.y_max >= height || !b.valid())
            raise(ErrorCode::RegionOutOfBounds, "crop bbox outside image");
        Image out(b.width(), b.height());
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) out.set(x, y, at(b.x_min + x, b.y_min + y));
        return out;
    }
};

/// Boolean foreground bitmap paired with its source dimensions.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> bits;  // 0 or 1 per pixel, row-major

    BinaryMask() = default;
    BinaryMask(int w, int h) : width(w), height(h), bits(static_cast<size_t>(w) * h, 0) {}

    bool operator==(const BinaryMask&) const = default;

    bool get(int x, int y) const { return bits[static_cast<size_t>(y) * width + x] != 0; }
    void set(int x, int y, bool v) { bits[static_cast<size_t>(y) * width + x] = v ? 1 : 0; }

    size_t count() const {
        size_t n = 0;
        for (uint8_t b : bits) n += b;
        return n;
    }
};

}  // namespace tsr
