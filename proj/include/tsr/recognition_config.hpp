/**
 * @file recognition_config.hpp
 * @brief Ablation switches for the multistep recognition pipeline.
 */

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "tsr/error.hpp"

namespace tsr {

/// The three knowledge stages that can be woven into the multistep prompt.
enum class Stage { Context, Characteristic, Differential };

inline const char* stage_name(Stage stage) {
    switch (stage) {
        case Stage::Context: return "context";
        case Stage::Characteristic: return "characteristic";
        case Stage::Differential: return "differential";
    }
    return "?";
}

inline Stage stage_from_name(const std::string& name) {
    if (name == "context") return Stage::Context;
    if (name == "characteristic") return Stage::Characteristic;
    if (name == "differential") return Stage::Differential;
    raise(ErrorCode::ConfigViolation, "unknown stage '" + name + "'");
}

struct RecognitionConfig {
    bool use_context = true;
    bool use_characteristic = true;
    bool use_differential = true;
    bool use_hypothesis = true;
    bool use_coordinates = true;
    /// Order in which enabled stage blocks appear in the prompt.
    std::vector<Stage> thinking_order = {Stage::Context, Stage::Characteristic,
                                         Stage::Differential};
    int k_max = 5;
    int max_hypothesis = 5;
    /// Characteristic blocks cover at most this many classes (sorted by id).
    int prompt_class_cap = 64;

    bool operator==(const RecognitionConfig&) const = default;

    bool stage_enabled(Stage stage) const {
        switch (stage) {
            case Stage::Context: return use_context;
            case Stage::Characteristic: return use_characteristic;
            case Stage::Differential: return use_differential;
        }
        return false;
    }

    std::vector<Stage> enabled_stages() const {
        std::vector<Stage> out;
        for (Stage s : {Stage::Context, Stage::Characteristic, Stage::Differential})
            if (stage_enabled(s)) out.push_back(s);
        return out;
    }

    void validate() const {
        if (k_max < 1) raise(ErrorCode::ConfigViolation, "k_max must be >= 1");
        if (max_hypothesis < 0) raise(ErrorCode::ConfigViolation, "max_hypothesis must be >= 0");
        if (prompt_class_cap < 1) raise(ErrorCode::ConfigViolation, "prompt_class_cap must be >= 1");
        std::set<Stage> order(thinking_order.begin(), thinking_order.end());
        if (order.size() != thinking_order.size())
            raise(ErrorCode::ConfigViolation, "thinking_order repeats a stage");
        std::vector<Stage> enabled = enabled_stages();
        if (order != std::set<Stage>(enabled.begin(), enabled.end()))
            raise(ErrorCode::ConfigViolation,
                  "thinking_order must contain exactly the enabled stages");
    }
};

inline nlohmann::json to_json(const RecognitionConfig& cfg) {
    nlohmann::json order = nlohmann::json::array();
    for (Stage s : cfg.thinking_order) order.push_back(stage_name(s));
    return nlohmann::json{{"use_context", cfg.use_context},
                          {"use_characteristic", cfg.use_characteristic},
                          {"use_differential", cfg.use_differential},
                          {"use_hypothesis", cfg.use_hypothesis},
                          {"use_coordinates", cfg.use_coordinates},
                          {"thinking_order", order},
                          {"k_max", cfg.k_max},
                          {"max_hypothesis", cfg.max_hypothesis},
                          {"prompt_class_cap", cfg.prompt_class_cap}};
}

inline RecognitionConfig recognition_config_from_json(const nlohmann::json& j) {
    RecognitionConfig cfg;
    cfg.use_context = j.value("use_context", cfg.use_context);
    cfg.use_characteristic = j.value("use_characteristic", cfg.use_characteristic);
    cfg.use_differential = j.value("use_differential", cfg.use_differential);
    cfg.use_hypothesis = j.value("use_hypothesis", cfg.use_hypothesis);
    cfg.use_coordinates = j.value("use_coordinates", cfg.use_coordinates);
    if (j.contains("thinking_order")) {
        cfg.thinking_order.clear();
        for (const auto& s : j["thinking_order"])
            cfg.thinking_order.push_back(stage_from_name(s.get<std::string>()));
    } else {
        cfg.thinking_order = cfg.enabled_stages();
    }
    cfg.k_max = j.value("k_max", cfg.k_max);
    cfg.max_hypothesis = j.value("max_hypothesis", cfg.max_hypothesis);
    cfg.prompt_class_cap = j.value("prompt_class_cap", cfg.prompt_class_cap);
    return cfg;
}

/// Convenience for ablation grids: switches set, order = enabled defaults.
inline RecognitionConfig make_config(bool context, bool characteristic, bool differential,
                                     bool hypothesis = true, bool coordinates = true) {
    RecognitionConfig cfg;
    cfg.use_context = context;
    cfg.use_characteristic = characteristic;
    cfg.use_differential = differential;
    cfg.use_hypothesis = hypothesis;
    cfg.use_coordinates = coordinates;
    cfg.thinking_order = cfg.enabled_stages();
    return cfg;
}

}  // namespace tsr
