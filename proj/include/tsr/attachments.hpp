/**
 * @file attachments.hpp
 * @brief Image -> request attachment encoding.
 */

#pragma once

#include "tsr/image.hpp"
#include "tsr/image_io.hpp"
#include "tsr/lmm.hpp"

namespace tsr::lmm {

/// Road scenes can be large; descriptions survive downscaling. Sign crops and
/// templates are often only tens of pixels wide and are sent untouched.
inline constexpr int kRoadImageMaxSide = 768;

enum class ImageRole { RoadScene, SignCrop, Template };

inline ImageAttachment encode_attachment(const Image& img, ImageRole role) {
    if (role == ImageRole::RoadScene) {
        Image scaled = downscale_longest_side(img, kRoadImageMaxSide);
        return ImageAttachment{"image/png", encode_png(scaled)};
    }
    return ImageAttachment{"image/png", encode_png(img)};
}

}  // namespace tsr::lmm
