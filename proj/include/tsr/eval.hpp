/**
 * @file eval.hpp
 * @brief Top-k accuracy, multi-trial runs, ablation grids, timing report.
 */

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tsr/dataset.hpp"
#include "tsr/digest.hpp"
#include "tsr/error.hpp"
#include "tsr/knowledge.hpp"
#include "tsr/log.hpp"
#include "tsr/parallel.hpp"
#include "tsr/pipeline.hpp"
#include "tsr/recognition_config.hpp"
#include "tsr/recognizer.hpp"

namespace tsr::eval {

namespace fs = std::filesystem;
using dataset::DatasetManifest;
using dataset::GroundTruth;
using dataset::SimilarityGroups;
using dataset::TemplateCatalog;
using knowledge::MemoryBank;
using nlohmann::json;
using recognizer::RecognitionResult;

inline constexpr std::array<int, 3> kTopKs{1, 3, 5};

// ---------------------------------------------------------------------------
// Top-k accuracy

/**
 * Fraction of truth samples whose class appears in the first k ranked
 * entries. Results must align with truth by image_id: an unknown or repeated
 * result id raises AlignmentError; truth ids with no result count as wrong.
 */
inline double topk_accuracy(const std::vector<RecognitionResult>& results,
                            const std::vector<GroundTruth>& truth, int k) {
    if (k < 1) raise(ErrorCode::ConfigViolation, "k must be >= 1");
    if (truth.empty()) raise(ErrorCode::AlignmentError, "no ground truth samples");
    std::map<std::string, const RecognitionResult*> by_id;
    std::set<std::string> truth_ids;
    for (const GroundTruth& gt : truth)
        if (!truth_ids.insert(gt.image_id).second)
            raise(ErrorCode::AlignmentError, "duplicate truth id '" + gt.image_id + "'");
    for (const RecognitionResult& r : results) {
        if (!truth_ids.count(r.image_id))
            raise(ErrorCode::AlignmentError, "result id '" + r.image_id + "' not in ground truth");
        if (!by_id.emplace(r.image_id, &r).second)
            raise(ErrorCode::AlignmentError, "duplicate result id '" + r.image_id + "'");
    }
    long long correct = 0;
    for (const GroundTruth& gt : truth) {
        auto it = by_id.find(gt.image_id);
        if (it == by_id.end()) continue;  // missing -> wrong
        const auto& ranked = it->second->ranked;
        int limit = k < static_cast<int>(ranked.size()) ? k : static_cast<int>(ranked.size());
        for (int i = 0; i < limit; ++i)
            if (ranked[i].class_id == gt.class_id) {
                ++correct;
                break;
            }
    }
    return static_cast<double>(correct) / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------
// Subset sampling

namespace detail {

/// Deterministic bounded draw (not std::uniform_int_distribution, whose
/// output is implementation-defined).
inline size_t bounded(std::mt19937_64& rng, size_t n) { return static_cast<size_t>(rng() % n); }

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[bounded(rng, i)]);
}

}  // namespace detail

/**
 * Seeded random subset that keeps every class present in the manifest (one
 * guaranteed entry per class, remainder drawn uniformly). Entries keep their
 * manifest order.
 */
inline DatasetManifest sample_subset(const DatasetManifest& manifest, size_t subset_size,
                                     uint64_t seed) {
    if (subset_size == 0 || subset_size >= manifest.entries.size()) return manifest;
    std::map<std::string, std::vector<size_t>> by_class;
    for (size_t i = 0; i < manifest.entries.size(); ++i)
        by_class[manifest.entries[i].ground_truth_class].push_back(i);
    if (subset_size < by_class.size())
        raise(ErrorCode::ConfigViolation,
              "subset_size " + std::to_string(subset_size) + " < " + std::to_string(by_class.size()) +
                  " classes present; classes must be preserved");

    std::mt19937_64 rng(seed);
    std::set<size_t> chosen;
    std::vector<size_t> rest;
    for (auto& [class_id, indices] : by_class) {
        size_t pick = indices[detail::bounded(rng, indices.size())];
        chosen.insert(pick);
        for (size_t i : indices)
            if (i != pick) rest.push_back(i);
    }
    std::sort(rest.begin(), rest.end());
    detail::shuffle(rest, rng);
    for (size_t i : rest) {
        if (chosen.size() >= subset_size) break;
        chosen.insert(i);
    }
    DatasetManifest out;
    out.dataset_id = manifest.dataset_id;
    for (size_t i : chosen) out.entries.push_back(manifest.entries[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Reports

struct EvalReport {
    std::string dataset_id;
    std::string config_fingerprint;
    RecognitionConfig config;
    int n_samples = 0;
    int trials = 0;
    uint64_t subset_seed = 0;
    std::vector<std::array<double, 3>> per_trial;  // Top-1/3/5 per trial
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::map<std::string, double> mean_stage_latency_ms;
    long long failures = 0;
    /// Config asked for context but the dataset has no road images; the row
    /// is rendered as "-" and never run.
    bool context_unavailable = false;
};

inline std::string config_fingerprint(const RecognitionConfig& cfg) {
    return short_digest(to_json(cfg).dump());
}

inline json report_to_json(const EvalReport& r) {
    json trials = json::array();
    for (const auto& t : r.per_trial) trials.push_back({{"top1", t[0]}, {"top3", t[1]}, {"top5", t[2]}});
    return json{{"dataset_id", r.dataset_id},
                {"config_fingerprint", r.config_fingerprint},
                {"config", to_json(r.config)},
                {"n_samples", r.n_samples},
                {"trials", r.trials},
                {"subset_seed", r.subset_seed},
                {"per_trial", trials},
                {"mean", {{"top1", r.mean[0]}, {"top3", r.mean[1]}, {"top5", r.mean[2]}}},
                {"mean_stage_latency_ms", r.mean_stage_latency_ms},
                {"failures", r.failures},
                {"context_unavailable", r.context_unavailable}};
}

struct RunOptions {
    int trials = 5;
    size_t subset_size = 0;  // 0 = all entries
    uint64_t subset_seed = 12345;
    int jobs = 1;
    fs::path results_dir;  // per-image JSONL records when set (resumable)
    extraction::ExtractionOptions extraction;
    std::map<std::string, Rgb> color_map = extraction::default_color_map();
};

// ---------------------------------------------------------------------------
// Trial running

namespace detail {

struct TrialOutcome {
    std::vector<RecognitionResult> results;
    long long failures = 0;
};

inline fs::path results_file(const RunOptions& opts, const std::string& fingerprint, int trial) {
    return opts.results_dir / (fingerprint + "_trial" + std::to_string(trial) + ".jsonl");
}

inline json result_record(const RecognitionResult& r) {
    json ranked = json::array();
    for (const auto& ref : r.ranked) ranked.push_back(ref.class_id);
    json transcript = json::array();
    for (const auto& t : r.transcript)
        transcript.push_back(
            {{"stage", t.stage}, {"prompt", t.prompt_digest}, {"response", t.response_digest}});
    return json{{"image_id", r.image_id},
                {"ranked", ranked},
                {"error", r.error},
                {"timings_ms", r.timings_ms},
                {"transcript", transcript}};
}

inline RecognitionResult result_from_record(const json& j, const TemplateCatalog& catalog) {
    RecognitionResult r;
    r.image_id = j.value("image_id", "");
    for (const auto& id : j.value("ranked", json::array()))
        if (const auto* ref = catalog.find(id.get<std::string>())) r.ranked.push_back(*ref);
    r.error = j.value("error", "");
    if (j.contains("timings_ms"))
        for (auto it = j["timings_ms"].begin(); it != j["timings_ms"].end(); ++it)
            r.timings_ms[it.key()] = it.value().get<long long>();
    return r;
}

inline TrialOutcome run_trial(const DatasetManifest& manifest, const TemplateCatalog& catalog,
                              const SimilarityGroups& groups, const MemoryBank& bank,
                              const RecognitionConfig& cfg, lmm::LmmClient& client,
                              const RunOptions& opts, const std::string& fingerprint, int trial,
                              bool bypass_cache) {
    TrialOutcome outcome;
    outcome.results.resize(manifest.entries.size());

    // Resume: skip images already recorded for this config/trial.
    std::map<std::string, RecognitionResult> previous;
    fs::path record_path;
    if (!opts.results_dir.empty()) {
        fs::create_directories(opts.results_dir);
        record_path = results_file(opts, fingerprint, trial);
        if (fs::exists(record_path)) {
            std::ifstream in(record_path);
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                try {
                    RecognitionResult r = result_from_record(json::parse(line), catalog);
                    previous[r.image_id] = std::move(r);
                } catch (const json::exception&) {
                    log_warn("skipping unreadable record in " + record_path.string());
                }
            }
        }
    }

    std::mutex record_mu;
    std::ofstream record_out;
    if (!record_path.empty()) record_out.open(record_path, std::ios::app);

    parallel_for(manifest.entries.size(), opts.jobs, [&](size_t i) {
        const dataset::ManifestEntry& entry = manifest.entries[i];
        auto prev = previous.find(entry.image_id);
        if (prev != previous.end()) {
            outcome.results[i] = prev->second;
            return;
        }
        RecognitionResult result;
        try {
            pipeline::PreparedSample sample =
                pipeline::prepare_entry(entry, opts.extraction, opts.color_map);
            result = recognizer::recognize(sample.crop, sample.road, bank, catalog, groups, cfg,
                                           client, bypass_cache);
            if (sample.extract_ms >= 0) result.timings_ms["extract"] = sample.extract_ms;
        } catch (const Error& e) {
            result = RecognitionResult{};
            result.image_id = entry.image_id;
            result.error = e.what();
            log_warn("recognition failed for '" + entry.image_id + "': " + e.what());
        }
        if (record_out.is_open()) {
            std::lock_guard lock(record_mu);
            record_out << result_record(result).dump() << "\n";
        }
        outcome.results[i] = std::move(result);
    });

    for (const RecognitionResult& r : outcome.results)
        if (!r.ok()) ++outcome.failures;
    return outcome;
}

}  // namespace detail

/**
 * Executes the full pipeline `trials` times and averages Top-k. When the
 * backend temperature is 0 the trials are deterministic and the response
 * cache applies; with temperature > 0 each call bypasses the cache so trials
 * measure real decoding variance.
 */
inline EvalReport run_trials(const DatasetManifest& manifest, const TemplateCatalog& catalog,
                             const SimilarityGroups& groups, const MemoryBank& bank,
                             const RecognitionConfig& requested_cfg, lmm::LmmClient& client,
                             const RunOptions& opts = {}) {
    if (opts.trials < 1) raise(ErrorCode::ConfigViolation, "trials must be >= 1");
    RecognitionConfig cfg = recognizer::effective_config(requested_cfg, manifest.has_road_images());
    cfg.validate();
    if (cfg.k_max < kTopKs.back())
        raise(ErrorCode::ConfigViolation,
              "k_max must be >= " + std::to_string(kTopKs.back()) + " for Top-5 evaluation");
    if (cfg.use_characteristic || cfg.use_differential)
        knowledge::require_coverage(bank, catalog, groups);

    DatasetManifest subset = sample_subset(manifest, opts.subset_size, opts.subset_seed);
    std::vector<GroundTruth> truth = dataset::ground_truth_of(subset);

    EvalReport report;
    report.dataset_id = manifest.dataset_id;
    report.config = cfg;
    report.config_fingerprint = config_fingerprint(cfg);
    report.n_samples = static_cast<int>(subset.entries.size());
    report.trials = opts.trials;
    report.subset_seed = opts.subset_seed;

    std::map<std::string, double> latency_sum;
    std::map<std::string, long long> latency_count;
    bool bypass_cache = client.config().temperature > 0.0;

    for (int trial = 0; trial < opts.trials; ++trial) {
        detail::TrialOutcome outcome = detail::run_trial(
            subset, catalog, groups, bank, cfg, client, opts, report.config_fingerprint, trial,
            bypass_cache);
        std::array<double, 3> metrics{};
        for (size_t ki = 0; ki < kTopKs.size(); ++ki)
            metrics[ki] = topk_accuracy(outcome.results, truth, kTopKs[ki]);
        if (!(metrics[0] <= metrics[1] && metrics[1] <= metrics[2]))
            raise(ErrorCode::Internal, "Top-k monotonicity violated");
        report.per_trial.push_back(metrics);
        report.failures += outcome.failures;
        for (const RecognitionResult& r : outcome.results)
            for (const auto& [stage, ms] : r.timings_ms) {
                latency_sum[stage] += static_cast<double>(ms);
                ++latency_count[stage];
            }
    }

    for (size_t ki = 0; ki < kTopKs.size(); ++ki) {
        double sum = 0.0;
        for (const auto& t : report.per_trial) sum += t[ki];
        report.mean[ki] = sum / static_cast<double>(report.trials);
    }
    for (const auto& [stage, sum] : latency_sum)
        report.mean_stage_latency_ms[stage] = sum / static_cast<double>(latency_count[stage]);
    return report;
}

// ---------------------------------------------------------------------------
// Ablation grids

/// The thinking-strategy grid: baseline and every stage combination.
inline std::vector<RecognitionConfig> table_strategy_configs(const RecognitionConfig& base) {
    auto with = [&](bool c, bool ch, bool d) {
        RecognitionConfig cfg = base;
        cfg.use_context = c;
        cfg.use_characteristic = ch;
        cfg.use_differential = d;
        if (!c) {
            cfg.use_hypothesis = false;
            cfg.use_coordinates = false;
        }
        cfg.thinking_order = cfg.enabled_stages();
        return cfg;
    };
    return {with(false, false, false), with(true, false, false), with(false, true, false),
            with(false, false, true),  with(true, false, true),  with(true, true, false),
            with(false, true, true),   with(true, true, true)};
}

/// The hypothesis/coordinate grid: all stages on, four switch combinations.
inline std::vector<RecognitionConfig> table_hypothesis_configs(const RecognitionConfig& base) {
    auto with = [&](bool hypothesis, bool coordinates) {
        RecognitionConfig cfg = base;
        cfg.use_context = cfg.use_characteristic = cfg.use_differential = true;
        cfg.use_hypothesis = hypothesis;
        cfg.use_coordinates = coordinates;
        cfg.thinking_order = cfg.enabled_stages();
        return cfg;
    };
    return {with(false, false), with(true, false), with(false, true), with(true, true)};
}

/// The thinking-order pair: default order vs the swapped order.
inline std::vector<RecognitionConfig> table_order_configs(const RecognitionConfig& base,
                                                          bool dataset_has_road_images) {
    RecognitionConfig original = base;
    if (!dataset_has_road_images) {
        original.use_context = false;
        original.use_hypothesis = false;
        original.use_coordinates = false;
    }
    original.use_characteristic = true;
    original.use_differential = true;
    original.thinking_order = original.enabled_stages();
    RecognitionConfig swapped = original;
    if (dataset_has_road_images)
        // context <-> characteristic
        std::swap(swapped.thinking_order[0], swapped.thinking_order[1]);
    else
        // characteristic <-> differential
        std::swap(swapped.thinking_order[swapped.thinking_order.size() - 2],
                  swapped.thinking_order.back());
    return {original, swapped};
}

inline bool is_baseline(const RecognitionConfig& cfg) {
    return !cfg.use_context && !cfg.use_characteristic && !cfg.use_differential;
}

/**
 * One report per config. Duplicate configs are rejected; a baseline row is
 * prepended when missing. Context rows on datasets without road images are
 * not run and render as "-".
 */
inline std::vector<EvalReport> ablation_grid(const DatasetManifest& manifest,
                                             const TemplateCatalog& catalog,
                                             const SimilarityGroups& groups, const MemoryBank& bank,
                                             std::vector<RecognitionConfig> configs,
                                             lmm::LmmClient& client, const RunOptions& opts = {}) {
    std::set<std::string> fingerprints;
    for (const RecognitionConfig& cfg : configs)
        if (!fingerprints.insert(config_fingerprint(cfg)).second)
            raise(ErrorCode::ConfigViolation, "duplicate config in ablation grid");
    if (std::none_of(configs.begin(), configs.end(), is_baseline)) {
        RecognitionConfig baseline = make_config(false, false, false, false, false);
        baseline.k_max = configs.empty() ? 5 : configs.front().k_max;
        log_info("adding missing baseline row to ablation grid");
        configs.insert(configs.begin(), baseline);
    }

    std::vector<EvalReport> reports;
    for (const RecognitionConfig& cfg : configs) {
        if (cfg.use_context && !manifest.has_road_images()) {
            EvalReport placeholder;
            placeholder.dataset_id = manifest.dataset_id;
            placeholder.config = cfg;
            placeholder.config_fingerprint = config_fingerprint(cfg);
            placeholder.context_unavailable = true;
            reports.push_back(std::move(placeholder));
            continue;
        }
        reports.push_back(run_trials(manifest, catalog, groups, bank, cfg, client, opts));
    }
    return reports;
}

// ---------------------------------------------------------------------------
// Rendering

inline std::string format_accuracy(double v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

/// Markdown table with the strategy checkmark columns.
inline std::string render_grid(const std::vector<EvalReport>& reports) {
    std::ostringstream out;
    out << "| Cont* | Char* | Diff* | Top-1 | Top-3 | Top-5 | n | failures |\n";
    out << "|---|---|---|---|---|---|---|---|\n";
    for (const EvalReport& r : reports) {
        auto mark = [](bool on) { return on ? "✓" : " "; };
        out << "| " << mark(r.config.use_context) << " | " << mark(r.config.use_characteristic)
            << " | " << mark(r.config.use_differential) << " | ";
        if (r.context_unavailable) {
            out << "- | - | - | - | - |\n";
            continue;
        }
        out << format_accuracy(r.mean[0]) << " | " << format_accuracy(r.mean[1]) << " | "
            << format_accuracy(r.mean[2]) << " | " << r.n_samples << " | " << r.failures << " |\n";
    }
    return out.str();
}

/// Per-stage mean latency table.
inline std::string render_timing_report(const EvalReport& report) {
    std::ostringstream out;
    out << "| stage | mean ms |\n|---|---|\n";
    for (const auto& [stage, ms] : report.mean_stage_latency_ms) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.1f", ms);
        out << "| " << stage << " | " << buf << " |\n";
    }
    return out.str();
}

inline void save_report(const EvalReport& report, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path.string());
    out << report_to_json(report).dump(2) << "\n";
}

}  // namespace tsr::eval
