/**
 * @file knowledge.hpp
 * @brief Prior-knowledge generation: context, characteristic, and
 *        differential descriptions, persisted in a memory bank.
 *
 * Three description families feed the multistep recognizer:
 *  - context: scene background around one target sign in the road image,
 *    optionally with a short candidate list (the prior sign hypothesis) and
 *    the sign's center coordinates embedded in the prompt;
 *  - characteristic: per-class shape/color/composition text generated once
 *    per template image via a fixed few-shot block;
 *  - differential: per similar-pair contrast text built from the two
 *    characteristic descriptions (text-only request).
 */

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tsr/attachments.hpp"
#include "tsr/dataset.hpp"
#include "tsr/error.hpp"
#include "tsr/geometry.hpp"
#include "tsr/image.hpp"
#include "tsr/image_io.hpp"
#include "tsr/lmm.hpp"
#include "tsr/log.hpp"
#include "tsr/recognition_config.hpp"
#include "tsr/textutil.hpp"

namespace tsr::knowledge {

namespace fs = std::filesystem;
using dataset::ClassRef;
using dataset::SimilarityGroups;
using dataset::TemplateCatalog;
using nlohmann::json;

/// Bump whenever a prompt template changes; stored in bank provenance and
/// invalidates stale entries.
inline constexpr const char* kPromptVersion = "v1";

inline constexpr const char* kSystemPrompt =
    "You are an expert assistant for recognizing traffic signs in road scenes.";

// ---------------------------------------------------------------------------
// Description records

struct ContextDescription {
    std::string image_id;
    SignRegion region;
    std::string background_text;
    std::vector<ClassRef> hypothesis;  // resolved candidates, possibly empty
    std::string raw_text;
};

struct CharacteristicDescription {
    std::string class_id;
    std::string shape;
    std::string color;
    std::string composition;
    std::string raw_text;

    bool operator==(const CharacteristicDescription&) const = default;

    std::string facet_block() const {
        return "Shape: " + shape + "\nColor: " + color + "\nComposition: " + composition;
    }
};

struct DifferentialDescription {
    std::pair<std::string, std::string> pair;  // normalized: first < second
    std::string text;

    bool operator==(const DifferentialDescription&) const = default;
};

inline std::pair<std::string, std::string> normalize_pair(std::string u, std::string v) {
    if (u == v) raise(ErrorCode::ConfigViolation, "differential pair needs two distinct classes");
    if (v < u) std::swap(u, v);
    return {std::move(u), std::move(v)};
}

struct BankProvenance {
    std::string backend_id;
    std::string model;
    std::string created_at;
    std::string prompt_version;

    bool operator==(const BankProvenance&) const = default;
};

struct MemoryBank {
    std::map<std::string, CharacteristicDescription> characteristics;
    std::map<std::pair<std::string, std::string>, DifferentialDescription> differentials;
    BankProvenance provenance;

    bool operator==(const MemoryBank&) const = default;

    const DifferentialDescription* find_pair(const std::string& u, const std::string& v) const {
        auto it = differentials.find(normalize_pair(u, v));
        return it == differentials.end() ? nullptr : &it->second;
    }
};

// ---------------------------------------------------------------------------
// Display-name matching

/// Best catalog class whose normalized display name contains, or is
/// contained in, the normalized candidate. Longest display name wins ties;
/// class_id order breaks exact ties. Returns nullptr when nothing matches.
inline const ClassRef* resolve_display_name(const TemplateCatalog& catalog,
                                            const std::string& candidate) {
    std::string norm = text::normalize_name(candidate);
    if (norm.empty() || norm == "none") return nullptr;
    const ClassRef* best = nullptr;
    size_t best_len = 0;
    for (const ClassRef& ref : catalog.classes) {
        std::string disp = text::normalize_name(ref.display_name);
        if (disp.empty()) continue;
        bool matches = norm.find(disp) != std::string::npos || disp.find(norm) != std::string::npos;
        if (!matches) continue;
        if (best == nullptr || disp.size() > best_len) {
            best = &ref;
            best_len = disp.size();
        }
    }
    return best;
}

/// All classes whose normalized display name occurs inside the normalized
/// text, in catalog order.
inline std::vector<ClassRef> find_names_in_text(const TemplateCatalog& catalog,
                                                const std::string& body) {
    std::string norm = text::normalize_name(body);
    std::vector<ClassRef> found;
    for (const ClassRef& ref : catalog.classes) {
        std::string disp = text::normalize_name(ref.display_name);
        if (!disp.empty() && norm.find(disp) != std::string::npos) found.push_back(ref);
    }
    return found;
}

// ---------------------------------------------------------------------------
// Prompt templates

/// Context prompt for one target sign in a road image. The center
/// coordinates, when enabled, appear verbatim as "(cx, cy)".
inline std::string build_context_prompt(const SignRegion& region, const TemplateCatalog& catalog,
                                        const RecognitionConfig& cfg) {
    std::ostringstream p;
    p << "This photograph shows a road scene that contains one or more traffic signs.\n";
    if (cfg.use_coordinates)
        p << "Focus on the traffic sign whose center is at pixel coordinates (" << region.center.x
          << ", " << region.center.y << ") in this image.\n";
    else
        p << "Focus on the most prominent traffic sign.\n";
    p << "Describe the background and surroundings of this traffic sign, such as the road type "
         "and any nearby vehicles, pedestrians, crossings, or buildings.";
    if (cfg.use_hypothesis) {
        p << "\nThen pick up to " << cfg.max_hypothesis
          << " plausible types for this sign from the following list:\n";
        bool first = true;
        for (const ClassRef& ref : catalog.classes) {
            if (!first) p << "; ";
            p << ref.display_name;
            first = false;
        }
        p << "\nAnswer in two labeled lines:\nBackground: <one or two sentences>\n"
             "Candidates: <semicolon-separated sign names from the list, or 'none'>";
    } else {
        p << "\nAnswer in one labeled line:\nBackground: <one or two sentences>";
    }
    return p.str();
}

/// Fixed few-shot exemplars showing the shape/color/composition answer form.
inline std::string characteristic_few_shot_block() {
    return "Example 1:\n"
           "Sign: Stop\n"
           "Shape: octagon\n"
           "Color: red background with a white border\n"
           "Composition: the word STOP in white capital letters\n"
           "\n"
           "Example 2:\n"
           "Sign: Speed Limit (30km/h)\n"
           "Shape: circle\n"
           "Color: white background with a red ring border\n"
           "Composition: the number 30 in black digits\n";
}

inline std::string build_characteristic_prompt(const ClassRef& ref) {
    std::ostringstream p;
    p << "Traffic signs are characterized by three key features: shape, color, and composition.\n"
      << "Here are two examples of how to describe them:\n\n"
      << characteristic_few_shot_block() << "\n"
      << "Now describe the template traffic sign shown in the image.\n"
      << "Sign: " << ref.display_name << "\n"
      << "Answer in three labeled lines:\nShape: <...>\nColor: <...>\nComposition: <...>";
    return p.str();
}

inline constexpr const char* kCharacteristicRetryReminder =
    "\nAnswer with exactly three lines labeled 'Shape:', 'Color:' and 'Composition:'.";

/// Differential prompt: text-only, built from the two characteristic texts.
inline std::string build_differential_prompt(const CharacteristicDescription& char_u,
                                             const CharacteristicDescription& char_v,
                                             const std::string& name_u, const std::string& name_v) {
    auto block = [](const CharacteristicDescription& c) {
        return c.raw_text.empty() ? c.facet_block() : c.raw_text;
    };
    std::ostringstream p;
    p << "Two types of traffic signs look similar and are easy to confuse.\n"
      << "Sign A is \"" << name_u << "\". Its characteristics:\n"
      << block(char_u) << "\n\n"
      << "Sign B is \"" << name_v << "\". Its characteristics:\n"
      << block(char_v) << "\n\n"
      << "Point out the visual differences that tell Sign A apart from Sign B.\n"
      << "Answer in one labeled line:\nDifferences: <...>";
    return p.str();
}

// ---------------------------------------------------------------------------
// Answer parsing

struct ContextAnswer {
    std::string background;
    std::vector<ClassRef> hypothesis;
};

inline ContextAnswer parse_context_answer(const std::string& raw, const TemplateCatalog& catalog,
                                          int max_hypothesis) {
    ContextAnswer out;
    if (auto bg = text::labeled_line(raw, "Background"))
        out.background = *bg;
    else
        out.background = text::trim(raw);

    auto candidates = text::labeled_line(raw, "Candidates");
    if (!candidates) return out;
    for (const std::string& piece : text::split(*candidates, ';')) {
        for (const std::string& sub : text::split(piece, ',')) {
            std::string name = text::trim(sub);
            if (name.empty()) continue;
            const ClassRef* ref = resolve_display_name(catalog, name);
            if (ref == nullptr) {
                if (text::normalize_name(name) != "none")
                    log_warn("dropping unmatched candidate '" + name + "'");
                continue;
            }
            bool dup = std::any_of(out.hypothesis.begin(), out.hypothesis.end(),
                                   [&](const ClassRef& r) { return r.class_id == ref->class_id; });
            if (!dup) out.hypothesis.push_back(*ref);
            if (static_cast<int>(out.hypothesis.size()) >= max_hypothesis) return out;
        }
    }
    return out;
}

inline std::optional<CharacteristicDescription> parse_characteristic_answer(const std::string& raw) {
    auto shape = text::labeled_line(raw, "Shape");
    auto color = text::labeled_line(raw, "Color");
    auto composition = text::labeled_line(raw, "Composition");
    if (!shape || !color || !composition || shape->empty() || color->empty() ||
        composition->empty())
        return std::nullopt;
    CharacteristicDescription out;
    out.shape = *shape;
    out.color = *color;
    out.composition = *composition;
    out.raw_text = raw;
    return out;
}

inline std::string parse_differential_answer(const std::string& raw) {
    if (auto diff = text::labeled_line(raw, "Differences")) return *diff;
    return text::trim(raw);
}

// ---------------------------------------------------------------------------
// Generation

inline ContextDescription gen_context(const Image& road, const SignRegion& region,
                                      const TemplateCatalog& catalog, const RecognitionConfig& cfg,
                                      lmm::LmmClient& client, const std::string& image_id = "",
                                      bool bypass_cache = false) {
    lmm::LmmRequest req;
    req.system_prompt = kSystemPrompt;
    req.stage = "context";
    req.bypass_cache = bypass_cache;
    req.add_image(lmm::encode_attachment(road, lmm::ImageRole::RoadScene));
    req.add_text(build_context_prompt(region, catalog, cfg));
    lmm::LmmResponse res = client.complete(std::move(req));

    ContextDescription out;
    out.image_id = image_id;
    out.region = region;
    out.raw_text = res.text;
    ContextAnswer parsed = parse_context_answer(res.text, catalog, cfg.max_hypothesis);
    out.background_text = parsed.background;
    if (cfg.use_hypothesis) out.hypothesis = std::move(parsed.hypothesis);
    if (out.background_text.empty()) log_warn("context generation produced empty background text");
    return out;
}

/// One call per template class; on a malformed answer, retried once with a
/// stricter format reminder before surfacing ParseFailure.
inline CharacteristicDescription gen_characteristic(const Image& template_image,
                                                    const ClassRef& ref, lmm::LmmClient& client) {
    lmm::ImageAttachment att = lmm::encode_attachment(template_image, lmm::ImageRole::Template);
    std::string prompt = build_characteristic_prompt(ref);
    for (int attempt = 0; attempt < 2; ++attempt) {
        lmm::LmmRequest req;
        req.system_prompt = kSystemPrompt;
        req.stage = "characteristic";
        req.add_image(att);
        req.add_text(attempt == 0 ? prompt : prompt + kCharacteristicRetryReminder);
        lmm::LmmResponse res = client.complete(std::move(req));
        if (auto parsed = parse_characteristic_answer(res.text)) {
            parsed->class_id = ref.class_id;
            return *parsed;
        }
        if (attempt == 0)
            log_warn("characteristic answer for '" + ref.class_id + "' unparseable, retrying");
    }
    raise(ErrorCode::ParseFailure, "characteristic answer for '" + ref.class_id + "'");
}

/// Text-only request: the inputs are the two characteristic descriptions,
/// no images attached.
inline DifferentialDescription gen_differential(const CharacteristicDescription& char_u,
                                                const CharacteristicDescription& char_v,
                                                const std::string& name_u, const std::string& name_v,
                                                lmm::LmmClient& client) {
    auto key = normalize_pair(char_u.class_id, char_v.class_id);
    lmm::LmmRequest req;
    req.system_prompt = kSystemPrompt;
    req.stage = "differential";
    req.add_text(build_differential_prompt(char_u, char_v, name_u, name_v));
    lmm::LmmResponse res = client.complete(std::move(req));
    return DifferentialDescription{key, parse_differential_answer(res.text)};
}

// ---------------------------------------------------------------------------
// Bank persistence

inline void save_bank(const MemoryBank& bank, const fs::path& path) {
    json j;
    j["version"] = 1;
    j["provenance"] = {{"backend_id", bank.provenance.backend_id},
                       {"model", bank.provenance.model},
                       {"created_at", bank.provenance.created_at},
                       {"prompt_version", bank.provenance.prompt_version}};
    j["characteristics"] = json::array();
    for (const auto& [class_id, c] : bank.characteristics)
        j["characteristics"].push_back({{"class_id", class_id},
                                        {"shape", c.shape},
                                        {"color", c.color},
                                        {"composition", c.composition},
                                        {"raw_text", c.raw_text}});
    j["differentials"] = json::array();
    for (const auto& [pair, d] : bank.differentials)
        j["differentials"].push_back(
            {{"pair", {pair.first, pair.second}}, {"text", d.text}});
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) raise(ErrorCode::IoError, "cannot write " + path.string());
        out << j.dump(2) << "\n";
    }
    fs::rename(tmp, path);
}

inline MemoryBank load_bank(const fs::path& path) {
    json j = dataset::detail::read_json_file(path);
    dataset::detail::require_version(j, path);
    MemoryBank bank;
    const json& prov = j.value("provenance", json::object());
    bank.provenance.backend_id = prov.value("backend_id", "");
    bank.provenance.model = prov.value("model", "");
    bank.provenance.created_at = prov.value("created_at", "");
    bank.provenance.prompt_version = prov.value("prompt_version", "");
    for (const json& cj : j.value("characteristics", json::array())) {
        CharacteristicDescription c;
        c.class_id = cj.value("class_id", "");
        c.shape = cj.value("shape", "");
        c.color = cj.value("color", "");
        c.composition = cj.value("composition", "");
        c.raw_text = cj.value("raw_text", "");
        if (c.class_id.empty() || c.shape.empty() || c.color.empty() || c.composition.empty())
            raise(ErrorCode::SchemaViolation, path.string() + ": incomplete characteristic entry");
        bank.characteristics[c.class_id] = std::move(c);
    }
    for (const json& dj : j.value("differentials", json::array())) {
        if (!dj.contains("pair") || !dj["pair"].is_array() || dj["pair"].size() != 2)
            raise(ErrorCode::SchemaViolation, path.string() + ": differential entry needs pair[2]");
        auto key = normalize_pair(dj["pair"][0].get<std::string>(), dj["pair"][1].get<std::string>());
        bank.differentials[key] = DifferentialDescription{key, dj.value("text", "")};
    }
    return bank;
}

/// Missing classes / pairs relative to the catalog and similarity groups.
struct CoverageReport {
    std::vector<std::string> missing_classes;
    std::vector<std::pair<std::string, std::string>> missing_pairs;

    bool complete() const { return missing_classes.empty() && missing_pairs.empty(); }

    std::string to_string() const {
        std::ostringstream out;
        if (!missing_classes.empty()) {
            out << "missing characteristics:";
            for (const auto& id : missing_classes) out << " " << id;
        }
        if (!missing_pairs.empty()) {
            if (!missing_classes.empty()) out << "; ";
            out << "missing differentials:";
            for (const auto& [u, v] : missing_pairs) out << " {" << u << "," << v << "}";
        }
        return out.str();
    }
};

inline CoverageReport coverage_of(const MemoryBank& bank, const TemplateCatalog& catalog,
                                  const SimilarityGroups& groups) {
    CoverageReport report;
    for (const ClassRef& ref : catalog.classes)
        if (!bank.characteristics.count(ref.class_id)) report.missing_classes.push_back(ref.class_id);
    for (const auto& pair : dataset::induced_pairs(groups))
        if (!bank.differentials.count(pair)) report.missing_pairs.push_back(pair);
    return report;
}

inline void require_coverage(const MemoryBank& bank, const TemplateCatalog& catalog,
                             const SimilarityGroups& groups) {
    CoverageReport report = coverage_of(bank, catalog, groups);
    if (!report.complete()) raise(ErrorCode::CoverageGap, report.to_string());
}

/// Loads and validates a bank against the catalog/groups it must cover.
inline MemoryBank load_bank(const fs::path& path, const TemplateCatalog& catalog,
                            const SimilarityGroups& groups) {
    MemoryBank bank = load_bank(path);
    require_coverage(bank, catalog, groups);
    return bank;
}

/// True (with a warning) when the stored prompt version is stale and entries
/// must be regenerated.
inline bool bank_needs_regeneration(const MemoryBank& bank) {
    if (bank.provenance.prompt_version == kPromptVersion) return false;
    log_warn("memory bank prompt_version '" + bank.provenance.prompt_version +
             "' differs from current '" + kPromptVersion + "'; forcing regeneration");
    return true;
}

// ---------------------------------------------------------------------------
// Bank building

struct BankBuildOptions {
    fs::path bank_path;  // when set: resume from and persist after each entry
    bool force = false;  // regenerate even when entries exist
};

struct BankBuildStats {
    long long characteristic_calls = 0;
    long long differential_calls = 0;
    std::vector<std::string> failures;
};

/// LMM calls still needed to complete the bank (dry-run support).
inline long long planned_bank_calls(const MemoryBank& bank, const TemplateCatalog& catalog,
                                    const SimilarityGroups& groups) {
    CoverageReport report = coverage_of(bank, catalog, groups);
    return static_cast<long long>(report.missing_classes.size() + report.missing_pairs.size());
}

/**
 * Characteristics for every catalog class, differentials for every pair
 * induced by the similarity groups. Idempotent: existing entries are skipped,
 * and the bank file (when given) is rewritten after each generated entry so
 * interrupted runs resume where they stopped.
 */
inline MemoryBank build_bank(const TemplateCatalog& catalog, const SimilarityGroups& groups,
                             lmm::LmmClient& client, const BankBuildOptions& opts = {},
                             BankBuildStats* stats_out = nullptr) {
    MemoryBank bank;
    if (!opts.bank_path.empty() && fs::exists(opts.bank_path)) {
        bank = load_bank(opts.bank_path);
        if (opts.force || bank_needs_regeneration(bank)) bank = MemoryBank{};
    }
    bank.provenance.backend_id = client.config().id;
    bank.provenance.model = client.config().model;
    bank.provenance.prompt_version = kPromptVersion;
    if (bank.provenance.created_at.empty()) {
        char buf[32];
        std::time_t now = std::time(nullptr);
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        bank.provenance.created_at = buf;
    }

    BankBuildStats stats;
    auto persist = [&] {
        if (!opts.bank_path.empty()) save_bank(bank, opts.bank_path);
    };

    for (const ClassRef& ref : catalog.classes) {
        if (bank.characteristics.count(ref.class_id)) continue;
        try {
            Image tpl = load_image(catalog.template_images.at(ref.class_id));
            bank.characteristics[ref.class_id] = gen_characteristic(tpl, ref, client);
            ++stats.characteristic_calls;
            persist();
        } catch (const Error& e) {
            stats.failures.push_back(ref.class_id + ": " + e.what());
        }
    }

    for (const auto& [u, v] : dataset::induced_pairs(groups)) {
        if (bank.differentials.count({u, v})) continue;
        auto cu = bank.characteristics.find(u);
        auto cv = bank.characteristics.find(v);
        if (cu == bank.characteristics.end() || cv == bank.characteristics.end()) {
            stats.failures.push_back("{" + u + "," + v + "}: characteristics unavailable");
            continue;
        }
        try {
            const ClassRef* ru = catalog.find(u);
            const ClassRef* rv = catalog.find(v);
            bank.differentials[{u, v}] = gen_differential(cu->second, cv->second, ru->display_name,
                                                          rv->display_name, client);
            ++stats.differential_calls;
            persist();
        } catch (const Error& e) {
            stats.failures.push_back("{" + u + "," + v + "}: " + e.what());
        }
    }

    if (stats_out != nullptr) *stats_out = stats;
    if (!stats.failures.empty()) {
        std::ostringstream msg;
        msg << stats.failures.size() << " bank entries failed:";
        for (const std::string& f : stats.failures) msg << " [" << f << "]";
        raise(ErrorCode::CoverageGap, msg.str());
    }
    return bank;
}

}  // namespace tsr::knowledge
