/**
 * @file runconfig.hpp
 * @brief The single run-config file driving all CLI commands.
 *
 * Versioned JSON; unknown keys are rejected at every level so typos fail
 * loudly instead of silently reverting to defaults.
 */

#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <set>
#include <string>

#include "tsr/dataset.hpp"
#include "tsr/digest.hpp"
#include "tsr/error.hpp"
#include "tsr/extraction.hpp"
#include "tsr/lmm.hpp"
#include "tsr/recognition_config.hpp"

namespace tsr {

namespace fs = std::filesystem;
using nlohmann::json;

struct EvalSettings {
    int trials = 5;
    size_t subset_size = 0;  // 0 = all
    uint64_t subset_seed = 12345;
    int jobs = 1;
};

struct RunConfig {
    fs::path manifest_path;
    fs::path catalog_path;
    fs::path groups_path;  // optional: empty means no similarity groups
    fs::path bank_path;
    fs::path output_dir = "out";
    lmm::BackendConfig backend;
    RecognitionConfig recognition;
    extraction::ExtractionOptions extraction;
    std::map<std::string, Rgb> color_map = extraction::default_color_map();
    EvalSettings eval;

    /// Short content hash of the whole config, embedded in outputs.
    std::string fingerprint() const;
    json to_json() const;
};

namespace runconfig_detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    dataset::detail::reject_unknown_keys(j, allowed, where);
}

inline fs::path path_of(const json& j, const char* key, const fs::path& base) {
    if (!j.contains(key)) return {};
    fs::path p = j[key].get<std::string>();
    return p.is_absolute() ? p : base / p;
}

inline Rgb rgb_of(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3)
        raise(ErrorCode::SchemaViolation, where + ": expected [r, g, b]");
    return Rgb{j[0].get<uint8_t>(), j[1].get<uint8_t>(), j[2].get<uint8_t>()};
}

}  // namespace runconfig_detail

inline RunConfig load_run_config(const fs::path& path) {
    using runconfig_detail::check_keys;
    using runconfig_detail::path_of;
    using runconfig_detail::rgb_of;

    json j = dataset::detail::read_json_file(path);
    dataset::detail::require_version(j, path);
    check_keys(j, {"version", "paths", "backend", "recognition", "extraction", "eval"},
               path.string());
    fs::path base = path.parent_path();
    RunConfig cfg;

    if (j.contains("paths")) {
        const json& p = j["paths"];
        check_keys(p, {"manifest", "catalog", "groups", "bank", "cache_dir", "output_dir"},
                   path.string() + " paths");
        cfg.manifest_path = path_of(p, "manifest", base);
        cfg.catalog_path = path_of(p, "catalog", base);
        cfg.groups_path = path_of(p, "groups", base);
        cfg.bank_path = path_of(p, "bank", base);
        cfg.backend.cache_dir = path_of(p, "cache_dir", base);
        if (p.contains("output_dir")) cfg.output_dir = path_of(p, "output_dir", base);
    }

    if (j.contains("backend")) {
        const json& b = j["backend"];
        check_keys(b,
                   {"kind", "id", "endpoint", "model", "api_key_env", "requests_per_minute",
                    "max_retries", "timeout_s", "temperature", "max_output_tokens", "mock_script"},
                   path.string() + " backend");
        std::string kind = b.value("kind", "mock");
        if (kind == "remote")
            cfg.backend.kind = lmm::BackendKind::Remote;
        else if (kind == "mock")
            cfg.backend.kind = lmm::BackendKind::Mock;
        else
            raise(ErrorCode::ConfigViolation, "backend.kind must be 'remote' or 'mock'");
        cfg.backend.id = b.value("id", kind);
        cfg.backend.endpoint = b.value("endpoint", "");
        cfg.backend.model = b.value("model", cfg.backend.kind == lmm::BackendKind::Mock
                                                 ? std::string("mock-model")
                                                 : std::string());
        cfg.backend.api_key_env = b.value("api_key_env", cfg.backend.api_key_env);
        cfg.backend.requests_per_minute = b.value("requests_per_minute", cfg.backend.requests_per_minute);
        cfg.backend.max_retries = b.value("max_retries", cfg.backend.max_retries);
        cfg.backend.timeout_s = b.value("timeout_s", cfg.backend.timeout_s);
        cfg.backend.temperature = b.value("temperature", cfg.backend.temperature);
        cfg.backend.max_output_tokens = b.value("max_output_tokens", cfg.backend.max_output_tokens);
        cfg.backend.mock_script = path_of(b, "mock_script", base);
    }
    cfg.backend.validate();
    if (cfg.backend.kind == lmm::BackendKind::Mock && cfg.backend.mock_script.empty())
        raise(ErrorCode::ConfigViolation, "mock backend requires backend.mock_script");

    if (j.contains("recognition")) {
        check_keys(j["recognition"],
                   {"use_context", "use_characteristic", "use_differential", "use_hypothesis",
                    "use_coordinates", "thinking_order", "k_max", "max_hypothesis",
                    "prompt_class_cap"},
                   path.string() + " recognition");
        cfg.recognition = recognition_config_from_json(j["recognition"]);
    }
    cfg.recognition.validate();

    if (j.contains("extraction")) {
        const json& e = j["extraction"];
        check_keys(e,
                   {"mask_label", "color_tolerance", "min_area", "padding", "fill",
                    "class_color_map"},
                   path.string() + " extraction");
        cfg.extraction.mask_label = e.value("mask_label", cfg.extraction.mask_label);
        cfg.extraction.color_tolerance = e.value("color_tolerance", cfg.extraction.color_tolerance);
        cfg.extraction.min_area = e.value("min_area", cfg.extraction.min_area);
        cfg.extraction.padding = e.value("padding", cfg.extraction.padding);
        if (e.contains("fill")) cfg.extraction.fill = rgb_of(e["fill"], path.string() + " fill");
        if (e.contains("class_color_map")) {
            cfg.color_map.clear();
            for (auto it = e["class_color_map"].begin(); it != e["class_color_map"].end(); ++it)
                cfg.color_map[it.key()] = rgb_of(it.value(), path.string() + " class_color_map");
        }
        if (cfg.extraction.min_area < 1)
            raise(ErrorCode::ConfigViolation, "extraction.min_area must be >= 1");
        if (cfg.extraction.padding < 0)
            raise(ErrorCode::ConfigViolation, "extraction.padding must be >= 0");
    }

    if (j.contains("eval")) {
        const json& e = j["eval"];
        check_keys(e, {"trials", "subset_size", "subset_seed", "jobs"}, path.string() + " eval");
        cfg.eval.trials = e.value("trials", cfg.eval.trials);
        cfg.eval.subset_size = e.value("subset_size", cfg.eval.subset_size);
        cfg.eval.subset_seed = e.value("subset_seed", cfg.eval.subset_seed);
        cfg.eval.jobs = e.value("jobs", cfg.eval.jobs);
        if (cfg.eval.trials < 1) raise(ErrorCode::ConfigViolation, "eval.trials must be >= 1");
        if (cfg.eval.jobs < 1) raise(ErrorCode::ConfigViolation, "eval.jobs must be >= 1");
    }

    return cfg;
}

inline json RunConfig::to_json() const {
    json order = json::array();
    for (Stage s : recognition.thinking_order) order.push_back(stage_name(s));
    json color_map_json;
    for (const auto& [label, c] : color_map) color_map_json[label] = {c.r, c.g, c.b};
    return json{
        {"paths",
         {{"manifest", manifest_path.string()},
          {"catalog", catalog_path.string()},
          {"groups", groups_path.string()},
          {"bank", bank_path.string()},
          {"cache_dir", backend.cache_dir.string()},
          {"output_dir", output_dir.string()}}},
        {"backend",
         {{"kind", backend.kind == lmm::BackendKind::Remote ? "remote" : "mock"},
          {"id", backend.id},
          {"endpoint", backend.endpoint},
          {"model", backend.model},
          {"requests_per_minute", backend.requests_per_minute},
          {"max_retries", backend.max_retries},
          {"timeout_s", backend.timeout_s},
          {"temperature", backend.temperature},
          {"max_output_tokens", backend.max_output_tokens},
          {"mock_script", backend.mock_script.string()}}},
        {"recognition", tsr::to_json(recognition)},
        {"extraction",
         {{"mask_label", extraction.mask_label},
          {"color_tolerance", extraction.color_tolerance},
          {"min_area", extraction.min_area},
          {"padding", extraction.padding},
          {"fill", {extraction.fill.r, extraction.fill.g, extraction.fill.b}},
          {"class_color_map", color_map_json}}},
        {"eval",
         {{"trials", eval.trials},
          {"subset_size", eval.subset_size},
          {"subset_seed", eval.subset_seed},
          {"jobs", eval.jobs}}}};
}

inline std::string RunConfig::fingerprint() const { return short_digest(to_json().dump()); }

}  // namespace tsr
