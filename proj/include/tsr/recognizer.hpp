/**
 * @file recognizer.hpp
 * @brief Multistep recognition: prompt assembly, the final LMM call, and
 *        ranked-answer parsing.
 */

#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tsr/dataset.hpp"
#include "tsr/error.hpp"
#include "tsr/extraction.hpp"
#include "tsr/knowledge.hpp"
#include "tsr/lmm.hpp"
#include "tsr/log.hpp"
#include "tsr/recognition_config.hpp"
#include "tsr/textutil.hpp"

namespace tsr::recognizer {

using dataset::ClassRef;
using dataset::SimilarityGroups;
using dataset::TemplateCatalog;
using extraction::SignCrop;
using knowledge::ContextDescription;
using knowledge::MemoryBank;

// ---------------------------------------------------------------------------
// Prompt structure

struct PromptBlock {
    std::string kind;  // "preamble" | "context" | "characteristic" | "differential" | "final"
    std::string text;
};

/// Ordered user parts: crop image, preamble, stage blocks in thinking_order,
/// final ranked-answer instruction.
struct MultistepPrompt {
    std::string system_prompt;
    lmm::ImageAttachment crop_image;
    std::vector<PromptBlock> blocks;

    lmm::LmmRequest to_request() const {
        lmm::LmmRequest req;
        req.system_prompt = system_prompt;
        req.stage = "multistep";
        req.add_image(crop_image);
        for (const PromptBlock& block : blocks) req.add_text(block.text);
        return req;
    }

    std::string joined_text() const {
        std::string out;
        for (const PromptBlock& block : blocks) {
            if (!out.empty()) out += "\n";
            out += block.text;
        }
        return out;
    }
};

// Stage block markers; tests assert their presence/absence per ablation.
inline constexpr const char* kContextMarker = "Scene context around the target sign:";
inline constexpr const char* kCharacteristicMarker = "Known characteristics of candidate sign types:";
inline constexpr const char* kDifferentialMarker = "Differences between similar sign types:";

/// Classes covered by the characteristic block and eligible for differential
/// pairs: the whole catalog when no hypothesis narrows the scope, otherwise
/// the hypothesis classes plus their similarity-group co-members. Capped at
/// cfg.prompt_class_cap (sorted by class_id) with a warning.
inline std::vector<ClassRef> scope_classes(const std::optional<ContextDescription>& cont,
                                           const TemplateCatalog& catalog,
                                           const SimilarityGroups& groups,
                                           const RecognitionConfig& cfg) {
    std::set<std::string> ids;
    if (cfg.use_hypothesis && cont && !cont->hypothesis.empty()) {
        for (const ClassRef& ref : cont->hypothesis) {
            ids.insert(ref.class_id);
            for (const std::string& co : dataset::co_members(groups, ref.class_id)) ids.insert(co);
        }
    } else {
        for (const ClassRef& ref : catalog.classes) ids.insert(ref.class_id);
    }
    std::vector<ClassRef> out;
    for (const std::string& id : ids)
        if (const ClassRef* ref = catalog.find(id)) out.push_back(*ref);
    if (static_cast<int>(out.size()) > cfg.prompt_class_cap) {
        log_warn("characteristic scope truncated from " + std::to_string(out.size()) + " to " +
                 std::to_string(cfg.prompt_class_cap) + " classes");
        out.resize(cfg.prompt_class_cap);
    }
    return out;  // sorted by class_id via the std::set
}

namespace detail {

inline std::string context_block(const ContextDescription& cont) {
    std::ostringstream out;
    out << kContextMarker << "\n" << cont.background_text;
    if (!cont.hypothesis.empty()) {
        out << "\nPlausible candidates from a first look: ";
        for (size_t i = 0; i < cont.hypothesis.size(); ++i) {
            if (i) out << "; ";
            out << cont.hypothesis[i].display_name;
        }
    }
    return out.str();
}

inline std::string characteristic_block(const std::vector<ClassRef>& scope, const MemoryBank& bank) {
    std::ostringstream out;
    out << kCharacteristicMarker;
    for (const ClassRef& ref : scope) {
        auto it = bank.characteristics.find(ref.class_id);
        if (it == bank.characteristics.end())
            raise(ErrorCode::CoverageGap, "no characteristic for '" + ref.class_id + "'");
        const auto& c = it->second;
        out << "\n- " << ref.display_name << ": shape: " << c.shape << "; color: " << c.color
            << "; composition: " << c.composition;
    }
    return out.str();
}

inline std::string differential_block(const std::vector<ClassRef>& scope, const MemoryBank& bank,
                                      const TemplateCatalog& catalog) {
    std::ostringstream out;
    out << kDifferentialMarker;
    for (size_t i = 0; i < scope.size(); ++i)
        for (size_t k = i + 1; k < scope.size(); ++k) {
            const auto* diff = bank.find_pair(scope[i].class_id, scope[k].class_id);
            if (diff == nullptr) continue;  // only banked (expert-listed) pairs
            const ClassRef* u = catalog.find(diff->pair.first);
            const ClassRef* v = catalog.find(diff->pair.second);
            out << "\n- \"" << (u ? u->display_name : diff->pair.first) << "\" vs \""
                << (v ? v->display_name : diff->pair.second) << "\": " << diff->text;
        }
    return out.str();
}

}  // namespace detail

/**
 * Builds the multistep prompt: preliminary-understanding preamble, enabled
 * stage blocks in cfg.thinking_order, then the ranked-answer instruction.
 */
inline MultistepPrompt assemble_multistep_prompt(const SignCrop& crop,
                                                 const std::optional<ContextDescription>& cont,
                                                 const MemoryBank& bank,
                                                 const TemplateCatalog& catalog,
                                                 const SimilarityGroups& groups,
                                                 const RecognitionConfig& cfg) {
    cfg.validate();
    if (cont.has_value() != cfg.use_context)
        raise(ErrorCode::ConfigViolation, cfg.use_context
                                              ? "use_context=true but no context description supplied"
                                              : "context description supplied but use_context=false");

    MultistepPrompt prompt;
    prompt.system_prompt = knowledge::kSystemPrompt;
    prompt.crop_image = lmm::encode_attachment(crop.patch, lmm::ImageRole::SignCrop);
    prompt.blocks.push_back(
        {"preamble",
         "You are shown one traffic sign extracted from a road image. Recognize its type. "
         "First, form a preliminary understanding of the sign from the image itself."});

    std::vector<ClassRef> scope = scope_classes(cont, catalog, groups, cfg);
    for (Stage stage : cfg.thinking_order) {
        switch (stage) {
            case Stage::Context:
                prompt.blocks.push_back({"context", detail::context_block(*cont)});
                break;
            case Stage::Characteristic:
                prompt.blocks.push_back({"characteristic", detail::characteristic_block(scope, bank)});
                break;
            case Stage::Differential:
                prompt.blocks.push_back(
                    {"differential", detail::differential_block(scope, bank, catalog)});
                break;
        }
    }

    std::ostringstream final_text;
    final_text << "Now decide. List the " << cfg.k_max
               << " most likely sign names, most likely first, as a numbered list (1., 2., ...). "
                  "Answer with sign names only.";
    prompt.blocks.push_back({"final", final_text.str()});
    return prompt;
}

// ---------------------------------------------------------------------------
// Ranked answer parsing

/// Enumerated lines matched against catalog display names by normalized
/// containment; duplicates keep the first occurrence; truncated to k_max.
/// Fallback for unenumerated text: exactly one catalog name present.
inline std::vector<ClassRef> parse_ranked_answer(const std::string& body,
                                                 const TemplateCatalog& catalog, int k_max) {
    std::vector<ClassRef> ranked;
    auto push_unique = [&](const ClassRef& ref) {
        bool dup = std::any_of(ranked.begin(), ranked.end(),
                               [&](const ClassRef& r) { return r.class_id == ref.class_id; });
        if (!dup && static_cast<int>(ranked.size()) < k_max) ranked.push_back(ref);
    };

    std::vector<std::string> items = text::enumerated_items(body);
    if (!items.empty()) {
        for (const std::string& item : items) {
            if (static_cast<int>(ranked.size()) >= k_max) break;
            if (const ClassRef* ref = knowledge::resolve_display_name(catalog, item))
                push_unique(*ref);
        }
        return ranked;
    }
    std::vector<ClassRef> found = knowledge::find_names_in_text(catalog, body);
    if (found.size() == 1) ranked.push_back(found.front());
    return ranked;
}

// ---------------------------------------------------------------------------
// Recognition

struct TranscriptEntry {
    std::string stage;
    std::string prompt_digest;
    std::string response_digest;
};

struct RecognitionResult {
    std::string image_id;
    std::vector<ClassRef> ranked;
    std::string raw_answer;
    std::vector<TranscriptEntry> transcript;
    std::map<std::string, long long> timings_ms;
    std::string error;  // empty on success; "EmptyAnswer" when nothing parsed

    bool ok() const { return error.empty(); }
};

/// When the dataset lacks road images, context cannot be generated; the
/// config is downgraded once per run with a warning.
inline RecognitionConfig effective_config(const RecognitionConfig& cfg, bool dataset_has_road_images,
                                          bool quiet = false) {
    if (!cfg.use_context || dataset_has_road_images) return cfg;
    if (!quiet)
        log_warn("dataset has entries without road images; context descriptions disabled");
    RecognitionConfig out = cfg;
    out.use_context = false;
    out.thinking_order.erase(
        std::remove(out.thinking_order.begin(), out.thinking_order.end(), Stage::Context),
        out.thinking_order.end());
    return out;
}

/**
 * Full recognition of one crop: optional context generation from the road
 * image, then the single multistep call. Backend failures propagate; an
 * unparseable final answer yields an empty ranking flagged as EmptyAnswer.
 */
inline RecognitionResult recognize(const SignCrop& crop, const std::optional<Image>& road,
                                   const MemoryBank& bank, const TemplateCatalog& catalog,
                                   const SimilarityGroups& groups, const RecognitionConfig& cfg,
                                   lmm::LmmClient& client, bool bypass_cache = false) {
    cfg.validate();
    if (cfg.use_context && !road.has_value())
        raise(ErrorCode::ConfigViolation,
              "use_context=true requires the original road image for '" + crop.image_id + "'");

    using clock = std::chrono::steady_clock;
    RecognitionResult result;
    result.image_id = crop.image_id;

    std::optional<ContextDescription> cont;
    if (cfg.use_context) {
        auto t0 = clock::now();
        cont = knowledge::gen_context(*road, crop.region, catalog, cfg, client, crop.image_id,
                                      bypass_cache);
        result.timings_ms["context"] =
            std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() - t0).count();
        result.transcript.push_back(
            {"context", short_digest(knowledge::build_context_prompt(crop.region, catalog, cfg)),
             short_digest(cont->raw_text)});
    }

    MultistepPrompt prompt = assemble_multistep_prompt(crop, cont, bank, catalog, groups, cfg);
    lmm::LmmRequest req = prompt.to_request();
    req.bypass_cache = bypass_cache;
    auto t0 = clock::now();
    lmm::LmmResponse res = client.complete(std::move(req));
    result.timings_ms["multistep"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() - t0).count();
    result.transcript.push_back(
        {"multistep", short_digest(prompt.joined_text()), short_digest(res.text)});

    result.raw_answer = res.text;
    result.ranked = parse_ranked_answer(res.text, catalog, cfg.k_max);
    if (result.ranked.empty()) result.error = "EmptyAnswer";
    return result;
}

}  // namespace tsr::recognizer
