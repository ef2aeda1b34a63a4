/**
 * @file image_io.hpp
 * @brief PNG/JPEG decode/encode and resizing, backed by OpenCV imgcodecs.
 */

#pragma once

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "tsr/error.hpp"
#include "tsr/image.hpp"

namespace tsr {

inline Image from_cv(const cv::Mat& bgr) {
    Image img(bgr.cols, bgr.rows);
    for (int y = 0; y < bgr.rows; ++y) {
        const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x)
            img.set(x, y, Rgb{row[x][2], row[x][1], row[x][0]});
    }
    return img;
}

inline cv::Mat to_cv(const Image& img) {
    cv::Mat bgr(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.width; ++x) {
            Rgb c = img.at(x, y);
            row[x] = cv::Vec3b(c.b, c.g, c.r);
        }
    }
    return bgr;
}

inline Image load_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        raise(ErrorCode::MissingFile, "image not found: " + path.string());
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty())
        raise(ErrorCode::IoError, "failed to decode image: " + path.string());
    return from_cv(bgr);
}

inline std::vector<uint8_t> encode_png(const Image& img) {
    std::vector<uint8_t> buf;
    if (!cv::imencode(".png", to_cv(img), buf))
        raise(ErrorCode::IoError, "png encode failed");
    return buf;
}

inline void save_png(const std::filesystem::path& path, const Image& img) {
    if (!cv::imwrite(path.string(), to_cv(img)))
        raise(ErrorCode::IoError, "failed to write image: " + path.string());
}

/// Area-interpolated downscale so the longest side is at most max_side.
/// Images already within the limit are returned unchanged.
inline Image downscale_longest_side(const Image& img, int max_side) {
    int longest = img.width > img.height ? img.width : img.height;
    if (longest <= max_side || max_side <= 0) return img;
    double scale = static_cast<double>(max_side) / longest;
    int w = static_cast<int>(img.width * scale + 0.5);
    int h = static_cast<int>(img.height * scale + 0.5);
    if (w < 1) w = 1;
    if (h < 1) h = 1;
    cv::Mat src = to_cv(img), dst;
    cv::resize(src, dst, cv::Size(w, h), 0, 0, cv::INTER_AREA);
    return from_cv(dst);
}

}  // namespace tsr
