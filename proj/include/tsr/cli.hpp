/**
 * @file cli.hpp
 * @brief Command implementations behind the CLI binary.
 *
 * Kept as library functions so the test suite can drive them directly.
 * Exit codes: 0 ok, 1 work failures, 2 config errors.
 */

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tsr/dataset.hpp"
#include "tsr/eval.hpp"
#include "tsr/extraction.hpp"
#include "tsr/image_io.hpp"
#include "tsr/knowledge.hpp"
#include "tsr/lmm.hpp"
#include "tsr/lmm_http.hpp"
#include "tsr/pipeline.hpp"
#include "tsr/recognizer.hpp"
#include "tsr/runconfig.hpp"

namespace tsr::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitWorkFailure = 1;
inline constexpr int kExitConfigError = 2;

struct CommandOptions {
    bool dry_run = false;
    bool keep_going = false;
    bool force = false;      // build-bank: regenerate existing entries
    int jobs = 0;            // 0 = take from config
    int trials = 0;          // 0 = take from config
    std::string grid;        // evaluate: "", "strategies", "hypothesis", "order"
    std::string image_id;    // recognize
    std::ostream* out = &std::cout;
};

inline bool is_config_error(ErrorCode code) {
    switch (code) {
        case ErrorCode::ConfigViolation:
        case ErrorCode::SchemaViolation:
        case ErrorCode::MissingFile:
        case ErrorCode::UnresolvedClass:
        case ErrorCode::DuplicateClassId:
        case ErrorCode::SingletonGroup:
        case ErrorCode::MissingTemplateImage:
        case ErrorCode::UnknownLabel:
        case ErrorCode::CoverageGap:
            return true;
        default:
            return false;
    }
}

inline lmm::LmmClient make_client(const RunConfig& cfg) {
    if (cfg.backend.kind == lmm::BackendKind::Mock)
        return lmm::LmmClient(cfg.backend,
                              std::make_unique<lmm::MockBackendAdapter>(
                                  lmm::MockScript::load(cfg.backend.mock_script)));
    return lmm::make_remote_client(cfg.backend);
}

namespace detail {

inline dataset::SimilarityGroups load_groups_or_empty(const RunConfig& cfg,
                                                      const dataset::TemplateCatalog& catalog) {
    if (cfg.groups_path.empty()) return {};
    return dataset::load_similarity_groups(cfg.groups_path, catalog);
}

inline knowledge::MemoryBank require_bank(const RunConfig& cfg) {
    if (cfg.bank_path.empty() || !fs::exists(cfg.bank_path))
        raise(ErrorCode::CoverageGap,
              "memory bank not built (expected at '" + cfg.bank_path.string() + "')");
    return knowledge::load_bank(cfg.bank_path);
}

inline json regions_sidecar(const std::string& image_id, const std::string& fingerprint,
                            const std::vector<SignRegion>& regions) {
    json arr = json::array();
    for (const SignRegion& r : regions)
        arr.push_back({{"bbox", {r.bbox.x_min, r.bbox.y_min, r.bbox.x_max, r.bbox.y_max}},
                       {"center", {r.center.x, r.center.y}},
                       {"area_px", r.area_px}});
    return json{{"image_id", image_id}, {"config_fingerprint", fingerprint}, {"regions", arr}};
}

}  // namespace detail

/// Runs extraction over every manifest entry with a mask; writes crops named
/// `{image_id}_{index}.png` plus a regions sidecar per image.
inline int cmd_extract(const RunConfig& cfg, const CommandOptions& opts = {}) {
    std::ostream& out = *opts.out;
    dataset::TemplateCatalog catalog = dataset::load_template_catalog(cfg.catalog_path);
    dataset::DatasetManifest manifest = dataset::load_manifest(cfg.manifest_path, catalog);
    fs::path crops_dir = cfg.output_dir / "crops";

    if (opts.dry_run) {
        int with_mask = 0;
        for (const auto& e : manifest.entries)
            if (e.has_mask()) ++with_mask;
        out << "dry-run: would extract " << with_mask << " of " << manifest.entries.size()
            << " entries into " << crops_dir.string() << "\n";
        out << "planned LMM calls: 0\n";
        return kExitOk;
    }

    fs::create_directories(crops_dir);
    size_t crops_written = 0;
    std::vector<std::string> failures;
    for (const auto& entry : manifest.entries) {
        try {
            if (!entry.has_mask())
                raise(ErrorCode::MissingFile, "entry '" + entry.image_id + "' has no mask image");
            Image road = load_image(entry.road_image_path);
            extraction::MaskImage mask{load_image(entry.mask_image_path), cfg.color_map};
            extraction::ExtractionResult result =
                extraction::extract_signs(road, mask, cfg.extraction, entry.image_id);
            for (size_t i = 0; i < result.crops.size(); ++i) {
                save_png(crops_dir / (entry.image_id + "_" + std::to_string(i) + ".png"),
                         result.crops[i].patch);
                ++crops_written;
            }
            std::ofstream sidecar(crops_dir / (entry.image_id + ".regions.json"));
            sidecar << detail::regions_sidecar(entry.image_id, cfg.fingerprint(), result.regions)
                           .dump(2)
                    << "\n";
        } catch (const Error& e) {
            failures.push_back(e.what());
            log_warn(std::string("extract: ") + e.what());
            if (!opts.keep_going) break;
        }
    }
    out << "extracted " << crops_written << " crops from " << manifest.entries.size()
        << " entries, " << failures.size() << " failures\n";
    for (const std::string& f : failures) out << "  failed: " << f << "\n";
    return failures.empty() ? kExitOk : kExitWorkFailure;
}

/// Builds or resumes the memory bank.
inline int cmd_build_bank(const RunConfig& cfg, const CommandOptions& opts = {}) {
    std::ostream& out = *opts.out;
    if (cfg.bank_path.empty())
        raise(ErrorCode::ConfigViolation, "paths.bank is required for build-bank");
    dataset::TemplateCatalog catalog = dataset::load_template_catalog(cfg.catalog_path);
    dataset::SimilarityGroups groups = detail::load_groups_or_empty(cfg, catalog);

    if (opts.dry_run) {
        knowledge::MemoryBank bank;
        if (fs::exists(cfg.bank_path)) {
            bank = knowledge::load_bank(cfg.bank_path);
            if (opts.force || knowledge::bank_needs_regeneration(bank)) bank = {};
        }
        out << "planned LMM calls: " << knowledge::planned_bank_calls(bank, catalog, groups) << "\n";
        return kExitOk;
    }

    lmm::LmmClient client = make_client(cfg);
    knowledge::BankBuildStats stats;
    try {
        knowledge::build_bank(catalog, groups, client,
                              {cfg.bank_path, opts.force}, &stats);
    } catch (const Error& e) {
        out << "bank build incomplete: " << e.what() << "\n";
        return kExitWorkFailure;
    }
    out << "bank complete: " << catalog.size() << " characteristics ("
        << stats.characteristic_calls << " generated), "
        << dataset::induced_pairs(groups).size() << " differential pairs ("
        << stats.differential_calls << " generated)\n";
    return kExitOk;
}

/// Recognizes a single manifest entry and prints the ranked answer plus the
/// call transcript.
inline int cmd_recognize(const RunConfig& cfg, const CommandOptions& opts) {
    std::ostream& out = *opts.out;
    if (opts.image_id.empty())
        raise(ErrorCode::ConfigViolation, "recognize requires --image-id");
    dataset::TemplateCatalog catalog = dataset::load_template_catalog(cfg.catalog_path);
    dataset::DatasetManifest manifest = dataset::load_manifest(cfg.manifest_path, catalog);
    dataset::SimilarityGroups groups = detail::load_groups_or_empty(cfg, catalog);

    const dataset::ManifestEntry* entry = nullptr;
    for (const auto& e : manifest.entries)
        if (e.image_id == opts.image_id) {
            entry = &e;
            break;
        }
    if (entry == nullptr)
        raise(ErrorCode::ConfigViolation, "image_id '" + opts.image_id + "' not in manifest");

    RecognitionConfig rec_cfg = recognizer::effective_config(cfg.recognition, entry->has_road());
    if (opts.dry_run) {
        out << "planned LMM calls: " << (rec_cfg.use_context ? 2 : 1) << "\n";
        return kExitOk;
    }

    knowledge::MemoryBank bank;
    if (rec_cfg.use_characteristic || rec_cfg.use_differential) bank = detail::require_bank(cfg);
    lmm::LmmClient client = make_client(cfg);
    pipeline::PreparedSample sample = pipeline::prepare_entry(*entry, cfg.extraction, cfg.color_map);
    recognizer::RecognitionResult result = recognizer::recognize(
        sample.crop, sample.road, bank, catalog, groups, rec_cfg, client, false);

    out << "image: " << result.image_id << "\n";
    out << "config fingerprint: " << cfg.fingerprint() << "\n";
    if (!result.ok()) out << "error: " << result.error << "\n";
    for (size_t i = 0; i < result.ranked.size(); ++i)
        out << "  " << (i + 1) << ". " << result.ranked[i].display_name << " ["
            << result.ranked[i].class_id << "]\n";
    out << "transcript:\n";
    for (const auto& t : result.transcript)
        out << "  " << t.stage << " prompt=" << t.prompt_digest << " response=" << t.response_digest
            << "\n";
    for (const auto& [stage, ms] : result.timings_ms)
        out << "  timing " << stage << ": " << ms << " ms\n";
    return result.ok() ? kExitOk : kExitWorkFailure;
}

/// Runs trials or an ablation grid and writes machine-readable reports plus a
/// rendered table.
inline int cmd_evaluate(const RunConfig& cfg, const CommandOptions& opts = {}) {
    std::ostream& out = *opts.out;
    dataset::TemplateCatalog catalog = dataset::load_template_catalog(cfg.catalog_path);
    dataset::DatasetManifest manifest = dataset::load_manifest(cfg.manifest_path, catalog);
    dataset::SimilarityGroups groups = detail::load_groups_or_empty(cfg, catalog);

    eval::RunOptions run_opts;
    run_opts.trials = opts.trials > 0 ? opts.trials : cfg.eval.trials;
    run_opts.subset_size = cfg.eval.subset_size;
    run_opts.subset_seed = cfg.eval.subset_seed;
    run_opts.jobs = opts.jobs > 0 ? opts.jobs : cfg.eval.jobs;
    run_opts.results_dir = cfg.output_dir / "results";
    run_opts.extraction = cfg.extraction;
    run_opts.color_map = cfg.color_map;

    std::vector<RecognitionConfig> configs;
    std::string grid_name = opts.grid;
    if (grid_name.empty())
        configs = {recognizer::effective_config(cfg.recognition, manifest.has_road_images())};
    else if (grid_name == "strategies" || grid_name == "table3")
        configs = eval::table_strategy_configs(cfg.recognition);
    else if (grid_name == "hypothesis" || grid_name == "table4")
        configs = eval::table_hypothesis_configs(cfg.recognition);
    else if (grid_name == "order" || grid_name == "table5")
        configs = eval::table_order_configs(cfg.recognition, manifest.has_road_images());
    else
        raise(ErrorCode::ConfigViolation, "unknown grid '" + grid_name + "'");

    if (opts.dry_run) {
        size_t n = cfg.eval.subset_size > 0 && cfg.eval.subset_size < manifest.entries.size()
                       ? cfg.eval.subset_size
                       : manifest.entries.size();
        long long planned = 0;
        for (const RecognitionConfig& rc : configs) {
            if (rc.use_context && !manifest.has_road_images()) continue;
            bool context = rc.use_context && manifest.has_road_images();
            planned += static_cast<long long>(n) * run_opts.trials * (context ? 2 : 1);
        }
        out << "planned LMM calls (upper bound, before caching): " << planned << "\n";
        return kExitOk;
    }

    bool needs_bank = std::any_of(configs.begin(), configs.end(), [](const RecognitionConfig& rc) {
        return rc.use_characteristic || rc.use_differential;
    });
    knowledge::MemoryBank bank;
    if (needs_bank) bank = detail::require_bank(cfg);
    lmm::LmmClient client = make_client(cfg);

    std::vector<eval::EvalReport> reports;
    if (grid_name.empty()) {
        reports.push_back(
            eval::run_trials(manifest, catalog, groups, bank, configs.front(), client, run_opts));
    } else {
        reports = eval::ablation_grid(manifest, catalog, groups, bank, configs, client, run_opts);
    }

    fs::create_directories(cfg.output_dir);
    long long failures = 0;
    for (const eval::EvalReport& report : reports) {
        json rj = eval::report_to_json(report);
        rj["run_config_fingerprint"] = cfg.fingerprint();
        std::ofstream rf(cfg.output_dir / ("report_" + report.config_fingerprint + ".json"));
        rf << rj.dump(2) << "\n";
        failures += report.failures;
    }
    std::string table = eval::render_grid(reports);
    {
        std::ofstream tf(cfg.output_dir /
                         ("grid_" + (grid_name.empty() ? std::string("single") : grid_name) + ".md"));
        tf << table;
    }
    out << "dataset: " << manifest.dataset_id << "  run fingerprint: " << cfg.fingerprint() << "\n";
    out << table;
    for (const eval::EvalReport& report : reports)
        if (!report.context_unavailable && !report.mean_stage_latency_ms.empty()) {
            out << "timing (config " << report.config_fingerprint << "):\n"
                << eval::render_timing_report(report);
            break;
        }
    return failures == 0 ? kExitOk : kExitWorkFailure;
}

}  // namespace tsr::cli
