/**
 * @file dataset.hpp
 * @brief Dataset manifests, template catalogs, similarity groups, ground truth.
 *
 * All three input files are versioned UTF-8 JSON with a top-level
 * `"version": 1`. Relative paths inside a file resolve against the file's
 * directory. See README for the exact schemas.
 */

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tsr/error.hpp"
#include "tsr/geometry.hpp"

namespace tsr::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

/// Stable slug id plus the human-readable name LMM answers are matched on.
struct ClassRef {
    std::string class_id;
    std::string display_name;
    std::string country;

    bool operator==(const ClassRef&) const = default;
};

inline bool valid_class_id(const std::string& id) {
    if (id.empty()) return false;
    for (char c : id) {
        bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
        if (!ok) return false;
    }
    return true;
}

/// Per-country template sign set. Classes are kept sorted by class_id so
/// every prompt assembled downstream is deterministic.
struct TemplateCatalog {
    std::vector<ClassRef> classes;
    std::map<std::string, fs::path> template_images;

    bool operator==(const TemplateCatalog&) const = default;

    size_t size() const { return classes.size(); }

    const ClassRef* find(const std::string& class_id) const {
        auto it = std::lower_bound(classes.begin(), classes.end(), class_id,
                                   [](const ClassRef& c, const std::string& id) { return c.class_id < id; });
        if (it == classes.end() || it->class_id != class_id) return nullptr;
        return &*it;
    }

    bool has_class(const std::string& class_id) const { return find(class_id) != nullptr; }
};

struct ManifestEntry {
    std::string image_id;
    fs::path road_image_path;       // empty when unused
    fs::path mask_image_path;       // empty when unused
    fs::path precropped_sign_path;  // empty when unused
    std::string ground_truth_class;
    std::optional<SignRegion> region_hint;

    bool operator==(const ManifestEntry&) const = default;

    bool precropped() const { return !precropped_sign_path.empty(); }
    bool has_road() const { return !road_image_path.empty(); }
    bool has_mask() const { return !mask_image_path.empty(); }
};

struct DatasetManifest {
    std::string dataset_id;
    std::vector<ManifestEntry> entries;

    bool operator==(const DatasetManifest&) const = default;

    bool has_road_images() const {
        return std::all_of(entries.begin(), entries.end(),
                           [](const ManifestEntry& e) { return e.has_road(); });
    }
};

struct SimilarityGroups {
    std::vector<std::vector<std::string>> groups;  // each sorted, deduplicated

    bool operator==(const SimilarityGroups&) const = default;
};

struct GroundTruth {
    std::string image_id;
    std::string class_id;
};

// ---------------------------------------------------------------------------
// JSON helpers

namespace detail {

inline json read_json_file(const fs::path& path) {
    if (!fs::exists(path)) raise(ErrorCode::MissingFile, path.string());
    std::ifstream in(path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        raise(ErrorCode::SchemaViolation, path.string() + ": " + e.what());
    }
    return j;
}

inline void require_version(const json& j, const fs::path& path) {
    if (!j.is_object() || !j.contains("version") || !j["version"].is_number_integer() ||
        j["version"].get<int>() != 1)
        raise(ErrorCode::SchemaViolation, path.string() + ": expected top-level version 1");
}

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            raise(ErrorCode::SchemaViolation, where + ": unknown key '" + it.key() + "'");
}

inline std::string get_string(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_string())
        raise(ErrorCode::SchemaViolation, where + ": missing string field '" + key + "'");
    return j[key].get<std::string>();
}

inline fs::path resolve(const fs::path& base_dir, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Loaders

inline TemplateCatalog load_template_catalog(const fs::path& path) {
    json j = detail::read_json_file(path);
    detail::require_version(j, path);
    detail::reject_unknown_keys(j, {"version", "classes"}, path.string());
    if (!j.contains("classes") || !j["classes"].is_array())
        raise(ErrorCode::SchemaViolation, path.string() + ": missing 'classes' array");

    fs::path base = path.parent_path();
    TemplateCatalog catalog;
    for (const json& cj : j["classes"]) {
        std::string where = path.string() + " class entry";
        detail::reject_unknown_keys(cj, {"class_id", "display_name", "country", "template_image_path"}, where);
        ClassRef ref;
        ref.class_id = detail::get_string(cj, "class_id", where);
        ref.display_name = detail::get_string(cj, "display_name", where);
        ref.country = cj.contains("country") ? detail::get_string(cj, "country", where) : "";
        if (!valid_class_id(ref.class_id))
            raise(ErrorCode::SchemaViolation, where + ": bad class_id '" + ref.class_id + "'");
        if (ref.display_name.empty())
            raise(ErrorCode::SchemaViolation, where + ": empty display_name for '" + ref.class_id + "'");
        if (catalog.template_images.count(ref.class_id))
            raise(ErrorCode::DuplicateClassId, ref.class_id);
        fs::path tpl = detail::resolve(base, detail::get_string(cj, "template_image_path", where));
        if (!fs::exists(tpl))
            raise(ErrorCode::MissingTemplateImage, ref.class_id + " -> " + tpl.string());
        catalog.template_images[ref.class_id] = tpl;
        catalog.classes.push_back(std::move(ref));
    }
    if (catalog.classes.size() < 2)
        raise(ErrorCode::SchemaViolation, path.string() + ": catalog needs at least 2 classes");
    std::sort(catalog.classes.begin(), catalog.classes.end(),
              [](const ClassRef& a, const ClassRef& b) { return a.class_id < b.class_id; });
    return catalog;
}

inline DatasetManifest load_manifest(const fs::path& path, const TemplateCatalog& catalog) {
    json j = detail::read_json_file(path);
    detail::require_version(j, path);
    detail::reject_unknown_keys(j, {"version", "dataset_id", "entries"}, path.string());
    DatasetManifest manifest;
    manifest.dataset_id = detail::get_string(j, "dataset_id", path.string());
    if (!j.contains("entries") || !j["entries"].is_array())
        raise(ErrorCode::SchemaViolation, path.string() + ": missing 'entries' array");

    fs::path base = path.parent_path();
    std::set<std::string> seen_ids;
    for (const json& ej : j["entries"]) {
        std::string where = path.string() + " entry";
        detail::reject_unknown_keys(ej,
                                    {"image_id", "road_image_path", "mask_image_path",
                                     "precropped_sign_path", "ground_truth_class", "region_hint"},
                                    where);
        ManifestEntry e;
        e.image_id = detail::get_string(ej, "image_id", where);
        where += " '" + e.image_id + "'";
        if (!seen_ids.insert(e.image_id).second)
            raise(ErrorCode::SchemaViolation, where + ": duplicate image_id");
        if (ej.contains("road_image_path"))
            e.road_image_path = detail::resolve(base, detail::get_string(ej, "road_image_path", where));
        if (ej.contains("mask_image_path"))
            e.mask_image_path = detail::resolve(base, detail::get_string(ej, "mask_image_path", where));
        if (ej.contains("precropped_sign_path"))
            e.precropped_sign_path =
                detail::resolve(base, detail::get_string(ej, "precropped_sign_path", where));
        e.ground_truth_class = detail::get_string(ej, "ground_truth_class", where);
        if (ej.contains("region_hint")) {
            const json& rh = ej["region_hint"];
            detail::reject_unknown_keys(rh, {"bbox"}, where + " region_hint");
            if (!rh.contains("bbox") || !rh["bbox"].is_array() || rh["bbox"].size() != 4)
                raise(ErrorCode::SchemaViolation, where + ": region_hint needs bbox [x0,y0,x1,y1]");
            BBox b{rh["bbox"][0].get<int>(), rh["bbox"][1].get<int>(), rh["bbox"][2].get<int>(),
                   rh["bbox"][3].get<int>()};
            if (!b.valid()) raise(ErrorCode::SchemaViolation, where + ": degenerate region_hint bbox");
            e.region_hint = make_region(b, b.area());
        }

        // Exactly one source per entry: a road scene (mask and/or bbox hint)
        // or an already-cropped sign image.
        if (e.precropped()) {
            if (e.has_road() || e.has_mask() || e.region_hint)
                raise(ErrorCode::SchemaViolation,
                      where + ": precropped entries must not carry road/mask/region fields");
        } else {
            if (!e.has_road())
                raise(ErrorCode::SchemaViolation, where + ": needs road_image_path or precropped_sign_path");
            if (!e.has_mask() && !e.region_hint)
                raise(ErrorCode::SchemaViolation,
                      where + ": road entries need mask_image_path or region_hint");
        }
        if (!catalog.has_class(e.ground_truth_class))
            raise(ErrorCode::UnresolvedClass, where + ": '" + e.ground_truth_class + "'");
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

inline void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
    json j;
    j["version"] = 1;
    j["dataset_id"] = manifest.dataset_id;
    j["entries"] = json::array();
    for (const ManifestEntry& e : manifest.entries) {
        json ej;
        ej["image_id"] = e.image_id;
        if (e.has_road()) ej["road_image_path"] = e.road_image_path.string();
        if (e.has_mask()) ej["mask_image_path"] = e.mask_image_path.string();
        if (e.precropped()) ej["precropped_sign_path"] = e.precropped_sign_path.string();
        ej["ground_truth_class"] = e.ground_truth_class;
        if (e.region_hint) {
            const BBox& b = e.region_hint->bbox;
            ej["region_hint"] = {{"bbox", {b.x_min, b.y_min, b.x_max, b.y_max}}};
        }
        j["entries"].push_back(std::move(ej));
    }
    std::ofstream out(path);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path.string());
    out << j.dump(2) << "\n";
}

inline SimilarityGroups load_similarity_groups(const fs::path& path, const TemplateCatalog& catalog) {
    json j = detail::read_json_file(path);
    detail::require_version(j, path);
    detail::reject_unknown_keys(j, {"version", "groups"}, path.string());
    if (!j.contains("groups") || !j["groups"].is_array())
        raise(ErrorCode::SchemaViolation, path.string() + ": missing 'groups' array");

    SimilarityGroups groups;
    for (const json& gj : j["groups"]) {
        if (!gj.is_array())
            raise(ErrorCode::SchemaViolation, path.string() + ": each group must be an array of ids");
        std::vector<std::string> members;
        for (const json& m : gj) {
            if (!m.is_string())
                raise(ErrorCode::SchemaViolation, path.string() + ": group members must be strings");
            std::string id = m.get<std::string>();
            if (!catalog.has_class(id)) raise(ErrorCode::UnresolvedClass, id);
            members.push_back(std::move(id));
        }
        std::sort(members.begin(), members.end());
        members.erase(std::unique(members.begin(), members.end()), members.end());
        if (members.size() < 2)
            raise(ErrorCode::SingletonGroup,
                  path.string() + ": group {" + (members.empty() ? "" : members.front()) + "}");
        groups.groups.push_back(std::move(members));
    }
    return groups;
}

/// All unordered class pairs that co-occur in some group, normalized
/// (first < second), deduplicated, sorted.
inline std::vector<std::pair<std::string, std::string>> induced_pairs(const SimilarityGroups& groups) {
    std::set<std::pair<std::string, std::string>> pairs;
    for (const auto& group : groups.groups)
        for (size_t i = 0; i < group.size(); ++i)
            for (size_t k = i + 1; k < group.size(); ++k) pairs.emplace(group[i], group[k]);
    return {pairs.begin(), pairs.end()};
}

/// Co-members of class_id across all groups, excluding itself.
inline std::vector<std::string> co_members(const SimilarityGroups& groups, const std::string& class_id) {
    std::set<std::string> out;
    for (const auto& group : groups.groups)
        if (std::binary_search(group.begin(), group.end(), class_id))
            for (const auto& m : group)
                if (m != class_id) out.insert(m);
    return {out.begin(), out.end()};
}

inline std::vector<GroundTruth> ground_truth_of(const DatasetManifest& manifest) {
    std::vector<GroundTruth> truth;
    truth.reserve(manifest.entries.size());
    for (const ManifestEntry& e : manifest.entries)
        truth.push_back(GroundTruth{e.image_id, e.ground_truth_class});
    return truth;
}

/// Reference converter for a folder-of-crops layout: one subdirectory per
/// class_id, each holding already-extracted sign images.
inline DatasetManifest manifest_from_crop_folders(const fs::path& root, const TemplateCatalog& catalog,
                                                  const std::string& dataset_id) {
    if (!fs::is_directory(root)) raise(ErrorCode::MissingFile, root.string());
    DatasetManifest manifest;
    manifest.dataset_id = dataset_id;
    std::vector<fs::path> class_dirs;
    for (const auto& d : fs::directory_iterator(root))
        if (d.is_directory()) class_dirs.push_back(d.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    for (const fs::path& dir : class_dirs) {
        std::string class_id = dir.filename().string();
        if (!catalog.has_class(class_id)) raise(ErrorCode::UnresolvedClass, class_id);
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(dir)) {
            std::string ext = f.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(),
                           [](unsigned char c) { return std::tolower(c); });
            if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(f.path());
        }
        std::sort(files.begin(), files.end());
        for (const fs::path& f : files) {
            ManifestEntry e;
            e.image_id = class_id + "_" + f.stem().string();
            e.precropped_sign_path = f;
            e.ground_truth_class = class_id;
            manifest.entries.push_back(std::move(e));
        }
    }
    return manifest;
}

}  // namespace tsr::dataset
