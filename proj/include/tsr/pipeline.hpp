/**
 * @file pipeline.hpp
 * @brief Manifest entry -> sign crop preparation (extraction or precropped).
 */

#pragma once

#include <chrono>
#include <optional>
#include <string>

#include "tsr/dataset.hpp"
#include "tsr/error.hpp"
#include "tsr/extraction.hpp"
#include "tsr/image.hpp"
#include "tsr/image_io.hpp"
#include "tsr/log.hpp"

namespace tsr::pipeline {

using dataset::ManifestEntry;
using extraction::ExtractionOptions;
using extraction::SignCrop;

struct PreparedSample {
    SignCrop crop;
    std::optional<Image> road;   // present for road-scene entries
    long long extract_ms = -1;   // >= 0 iff the extraction detector ran
};

namespace detail {

/// The extracted region matching a dataset-supplied bbox hint (best IoU).
inline const SignRegion* best_match(const std::vector<SignRegion>& regions, const SignRegion& hint) {
    const SignRegion* best = nullptr;
    double best_iou = 0.0;
    for (const SignRegion& r : regions) {
        double v = iou(r.bbox, hint.bbox);
        if (v > best_iou) {
            best_iou = v;
            best = &r;
        }
    }
    return best;
}

inline const SignRegion& largest(const std::vector<SignRegion>& regions) {
    const SignRegion* best = &regions.front();
    for (const SignRegion& r : regions)
        if (r.area_px > best->area_px) best = &r;
    return *best;
}

}  // namespace detail

/**
 * Prepares one manifest entry for recognition.
 *
 * Precropped entries load the crop directly. Road entries with a mask run the
 * extraction detector; when the entry also carries a region hint, the
 * extracted region with the best hint overlap is used, otherwise the largest
 * region (with a warning when several were found). Road entries with only a
 * hint crop the road image directly.
 */
inline PreparedSample prepare_entry(const ManifestEntry& entry, const ExtractionOptions& opts,
                                    const std::map<std::string, Rgb>& color_map) {
    PreparedSample sample;
    if (entry.precropped()) {
        Image img = load_image(entry.precropped_sign_path);
        BBox full{0, 0, img.width - 1, img.height - 1};
        sample.crop = SignCrop{std::move(img), entry.image_id, make_region(full, full.area())};
        return sample;
    }

    sample.road = load_image(entry.road_image_path);
    if (entry.has_mask()) {
        extraction::MaskImage mask{load_image(entry.mask_image_path), color_map};
        auto t0 = std::chrono::steady_clock::now();
        extraction::ExtractionResult extracted =
            extraction::extract_signs(*sample.road, mask, opts, entry.image_id);
        sample.extract_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
        if (extracted.regions.empty()) {
            if (entry.region_hint) {
                log_warn("no regions extracted for '" + entry.image_id + "', falling back to hint");
                sample.crop = extraction::crop_sign(*sample.road, *entry.region_hint, opts.padding,
                                                    entry.image_id);
                return sample;
            }
            raise(ErrorCode::Internal, "no sign region found in mask for '" + entry.image_id + "'");
        }
        const SignRegion* region = nullptr;
        if (entry.region_hint) region = detail::best_match(extracted.regions, *entry.region_hint);
        if (region == nullptr) {
            if (extracted.regions.size() > 1)
                log_warn("'" + entry.image_id + "' has " + std::to_string(extracted.regions.size()) +
                         " regions; using the largest");
            region = &detail::largest(extracted.regions);
        }
        sample.crop = extraction::crop_sign(extracted.composite, *region, opts.padding, entry.image_id);
        return sample;
    }

    // Hint-only entry: crop straight from the road image (keeps background).
    sample.crop = extraction::crop_sign(*sample.road, *entry.region_hint, opts.padding, entry.image_id);
    return sample;
}

}  // namespace tsr::pipeline
