/**
 * @file lmm.hpp
 * @brief Backend abstraction for multimodal chat completions.
 *
 * Two backends share one client surface: a remote chat-completions endpoint
 * (see lmm_http.hpp) and a deterministic scripted mock. Responses are cached
 * on disk keyed by a content hash of the request, and remote traffic is
 * bounded by a sliding-window rate limiter.
 */

#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "tsr/digest.hpp"
#include "tsr/error.hpp"
#include "tsr/log.hpp"

namespace tsr::lmm {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Clock

/// Injectable time source so rate limiting and backoff are testable.
class Clock {
public:
    virtual ~Clock() = default;
    virtual double now_s() = 0;
    virtual void sleep_s(double seconds) = 0;
};

class SystemClock final : public Clock {
public:
    double now_s() override {
        auto t = std::chrono::steady_clock::now().time_since_epoch();
        return std::chrono::duration<double>(t).count();
    }
    void sleep_s(double seconds) override {
        if (seconds > 0) std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
    }
};

/// Virtual time: sleeping advances the clock instantly.
class ManualClock final : public Clock {
public:
    double now_s() override {
        std::lock_guard lock(mu_);
        return t_;
    }
    void sleep_s(double seconds) override {
        std::lock_guard lock(mu_);
        if (seconds > 0) t_ += seconds;
    }
    void advance(double seconds) { sleep_s(seconds); }

private:
    std::mutex mu_;
    double t_ = 0.0;
};

// ---------------------------------------------------------------------------
// Requests and responses

struct ImageAttachment {
    std::string media_type;      // e.g. "image/png"
    std::vector<uint8_t> bytes;  // encoded image

    bool operator==(const ImageAttachment&) const = default;
};

using UserPart = std::variant<std::string, ImageAttachment>;

struct LmmRequest {
    std::string system_prompt;
    std::vector<UserPart> user_parts;
    double temperature = 0.0;
    int max_output_tokens = 1024;
    std::string backend_id;  // filled from config when empty
    std::string model;       // filled from config when empty
    std::string stage;       // context | characteristic | differential | multistep
    bool bypass_cache = false;

    void add_text(std::string text) { user_parts.emplace_back(std::move(text)); }
    void add_image(ImageAttachment att) { user_parts.emplace_back(std::move(att)); }

    /// Concatenation of system prompt and user text parts, used for mock
    /// rule matching and prompt digests.
    std::string prompt_text() const {
        std::string out = system_prompt;
        for (const UserPart& part : user_parts)
            if (const auto* text = std::get_if<std::string>(&part)) {
                if (!out.empty()) out += "\n";
                out += *text;
            }
        return out;
    }
};

struct LmmUsage {
    long long input_tokens = 0;
    long long output_tokens = 0;
};

struct LmmResponse {
    std::string text;
    LmmUsage usage;
    long long latency_ms = 0;
    bool cached = false;
    int retries = 0;
};

inline void validate_request(const LmmRequest& req) {
    if (req.user_parts.empty())
        raise(ErrorCode::ConfigViolation, "request needs at least one user part");
    if (req.temperature < 0.0 || req.temperature > 2.0)
        raise(ErrorCode::ConfigViolation, "temperature outside [0, 2]");
    if (req.max_output_tokens <= 0)
        raise(ErrorCode::ConfigViolation, "max_output_tokens must be positive");
    for (const UserPart& part : req.user_parts)
        if (const auto* img = std::get_if<ImageAttachment>(&part)) {
            if (img->bytes.empty())
                raise(ErrorCode::ConfigViolation, "empty image attachment");
            if (img->media_type.empty())
                raise(ErrorCode::ConfigViolation, "image attachment without media type");
        }
}

enum class BackendKind { Remote, Mock };

struct BackendConfig {
    BackendKind kind = BackendKind::Mock;
    std::string id = "default";
    std::string endpoint;  // full URL of the chat-completions route
    std::string model;
    std::string api_key_env = "TSR_API_KEY";
    int requests_per_minute = 60;
    int max_retries = 3;
    double timeout_s = 60.0;
    double temperature = 0.0;  // deterministic by default; trials cover variance
    int max_output_tokens = 1024;
    fs::path cache_dir;     // empty disables caching
    fs::path mock_script;   // mock kind: scripted responses

    void validate() const {
        if (requests_per_minute < 1)
            raise(ErrorCode::ConfigViolation, "requests_per_minute must be >= 1");
        if (temperature < 0.0 || temperature > 2.0)
            raise(ErrorCode::ConfigViolation, "temperature outside [0, 2]");
        if (max_output_tokens < 1)
            raise(ErrorCode::ConfigViolation, "max_output_tokens must be >= 1");
        if (kind == BackendKind::Remote && (endpoint.empty() || model.empty()))
            raise(ErrorCode::ConfigViolation, "remote backend requires endpoint and model");
    }
};

/// Content hash over (backend_id, model, system prompt, ordered user parts,
/// temperature). Stable across runs and platforms.
inline std::string cache_key(const LmmRequest& req) {
    Sha256 h;
    h.update_framed("backend_id", req.backend_id);
    h.update_framed("model", req.model);
    h.update_framed("system", req.system_prompt);
    for (const UserPart& part : req.user_parts) {
        if (const auto* text = std::get_if<std::string>(&part))
            h.update_framed("text", *text);
        else {
            const auto& img = std::get<ImageAttachment>(part);
            h.update_framed("image", img.bytes.data(), img.bytes.size());
        }
    }
    char temp[64];
    std::snprintf(temp, sizeof(temp), "%.17g", req.temperature);
    h.update_framed("temperature", temp);
    return h.hex();
}

// ---------------------------------------------------------------------------
// Rate limiting

/// Sliding-window limiter: at most `rpm` acquisitions inside any 60 s window.
class RateLimiter {
public:
    RateLimiter(int rpm, std::shared_ptr<Clock> clock)
        : rpm_(rpm), clock_(std::move(clock)) {}

    void acquire() {
        std::lock_guard lock(mu_);
        for (;;) {
            double now = clock_->now_s();
            while (!sent_.empty() && now - sent_.front() >= 60.0) sent_.pop_front();
            if (static_cast<int>(sent_.size()) < rpm_) {
                sent_.push_back(now);
                return;
            }
            clock_->sleep_s(sent_.front() + 60.0 - now);
        }
    }

private:
    int rpm_;
    std::shared_ptr<Clock> clock_;
    std::deque<double> sent_;
    std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Response cache

/// One JSON file per key under cache_dir: a small header (created_at, model)
/// plus the response text and usage.
class ResponseCache {
public:
    explicit ResponseCache(fs::path dir)
        : dir_(std::move(dir)), mu_(std::make_unique<std::mutex>()) {
        if (!dir_.empty()) fs::create_directories(dir_);
    }

    bool enabled() const { return !dir_.empty(); }

    std::optional<LmmResponse> lookup(const std::string& key) {
        if (!enabled()) return std::nullopt;
        std::lock_guard lock(*mu_);
        fs::path file = dir_ / (key + ".json");
        if (!fs::exists(file)) return std::nullopt;
        std::ifstream in(file);
        json j;
        try {
            in >> j;
        } catch (const json::exception&) {
            log_warn("dropping unreadable cache entry " + file.string());
            return std::nullopt;
        }
        LmmResponse res;
        res.text = j.value("text", "");
        res.usage.input_tokens = j.value("input_tokens", 0LL);
        res.usage.output_tokens = j.value("output_tokens", 0LL);
        res.cached = true;
        return res;
    }

    void store(const std::string& key, const std::string& model, const LmmResponse& res) {
        if (!enabled()) return;
        std::lock_guard lock(*mu_);
        json j;
        j["created_at"] = static_cast<long long>(
            std::chrono::duration_cast<std::chrono::seconds>(
                std::chrono::system_clock::now().time_since_epoch())
                .count());
        j["model"] = model;
        j["text"] = res.text;
        j["input_tokens"] = res.usage.input_tokens;
        j["output_tokens"] = res.usage.output_tokens;
        fs::path tmp = dir_ / (key + ".tmp");
        {
            std::ofstream out(tmp);
            out << j.dump();
        }
        fs::rename(tmp, dir_ / (key + ".json"));
    }

private:
    fs::path dir_;
    std::unique_ptr<std::mutex> mu_;  // keeps the cache (and LmmClient) movable
};

// ---------------------------------------------------------------------------
// Mock backend

/// One scripted response. A rule applies when every non-empty matcher does:
/// stage equality, prompt substring, or the SHA-256 of any image attachment.
struct MockRule {
    std::string stage;
    std::string prompt_contains;
    std::string image_digest;
    std::string response;
};

struct MockScript {
    std::string default_response;
    std::vector<MockRule> rules;

    static MockScript from_json(const json& j) {
        MockScript script;
        script.default_response = j.value("default_response", "");
        if (j.contains("rules"))
            for (const json& rj : j["rules"]) {
                MockRule rule;
                rule.stage = rj.value("stage", "");
                rule.prompt_contains = rj.value("prompt_contains", "");
                rule.image_digest = rj.value("image_digest", "");
                rule.response = rj.value("response", "");
                script.rules.push_back(std::move(rule));
            }
        return script;
    }

    static MockScript load(const fs::path& path) {
        if (!fs::exists(path)) raise(ErrorCode::MissingFile, path.string());
        std::ifstream in(path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            raise(ErrorCode::SchemaViolation, path.string() + ": " + e.what());
        }
        return from_json(j);
    }

    void save(const fs::path& path) const {
        json j;
        j["default_response"] = default_response;
        j["rules"] = json::array();
        for (const MockRule& rule : rules) {
            json rj;
            if (!rule.stage.empty()) rj["stage"] = rule.stage;
            if (!rule.prompt_contains.empty()) rj["prompt_contains"] = rule.prompt_contains;
            if (!rule.image_digest.empty()) rj["image_digest"] = rule.image_digest;
            rj["response"] = rule.response;
            j["rules"].push_back(std::move(rj));
        }
        std::ofstream out(path);
        out << j.dump(2) << "\n";
    }
};

/// Deterministic function of the request: first matching rule wins, else the
/// script default. Counts calls per stage for idempotence tests.
class MockBackend {
public:
    explicit MockBackend(MockScript script) : script_(std::move(script)) {}

    LmmResponse call(const LmmRequest& req) {
        {
            std::lock_guard lock(mu_);
            ++total_calls_;
            ++calls_by_stage_[req.stage];
        }
        std::string prompt = req.prompt_text();
        std::vector<std::string> digests;
        for (const UserPart& part : req.user_parts)
            if (const auto* img = std::get_if<ImageAttachment>(&part))
                digests.push_back(sha256_hex(img->bytes));

        const std::string* answer = &script_.default_response;
        for (const MockRule& rule : script_.rules) {
            if (!rule.stage.empty() && rule.stage != req.stage) continue;
            if (!rule.prompt_contains.empty() && prompt.find(rule.prompt_contains) == std::string::npos)
                continue;
            if (!rule.image_digest.empty()) {
                bool hit = false;
                for (const std::string& d : digests)
                    if (d == rule.image_digest) {
                        hit = true;
                        break;
                    }
                if (!hit) continue;
            }
            answer = &rule.response;
            break;
        }

        LmmResponse res;
        res.text = *answer;
        res.usage.input_tokens = static_cast<long long>(prompt.size() / 4) + 1;
        res.usage.output_tokens = static_cast<long long>(res.text.size() / 4) + 1;
        return res;
    }

    long long total_calls() const {
        std::lock_guard lock(mu_);
        return total_calls_;
    }

    long long calls_for_stage(const std::string& stage) const {
        std::lock_guard lock(mu_);
        auto it = calls_by_stage_.find(stage);
        return it == calls_by_stage_.end() ? 0 : it->second;
    }

    void reset_counters() {
        std::lock_guard lock(mu_);
        total_calls_ = 0;
        calls_by_stage_.clear();
    }

private:
    MockScript script_;
    mutable std::mutex mu_;
    long long total_calls_ = 0;
    std::map<std::string, long long> calls_by_stage_;
};

// ---------------------------------------------------------------------------
// Backend interface + client

class Backend {
public:
    virtual ~Backend() = default;
    virtual LmmResponse call(const LmmRequest& req) = 0;
};

class MockBackendAdapter final : public Backend {
public:
    explicit MockBackendAdapter(MockScript script) : mock_(std::move(script)) {}
    LmmResponse call(const LmmRequest& req) override { return mock_.call(req); }
    MockBackend& mock() { return mock_; }

private:
    MockBackend mock_;
};

/// Uniform entry point: validates, consults the cache, dispatches to the
/// backend, stores the result. Safe for concurrent callers.
class LmmClient {
public:
    LmmClient(BackendConfig cfg, std::unique_ptr<Backend> backend,
              std::shared_ptr<Clock> clock = nullptr)
        : cfg_(std::move(cfg)),
          backend_(std::move(backend)),
          clock_(clock ? std::move(clock) : std::make_shared<SystemClock>()),
          cache_(cfg_.cache_dir) {
        cfg_.validate();
    }

    static LmmClient make_mock(MockScript script, fs::path cache_dir = {}) {
        BackendConfig cfg;
        cfg.kind = BackendKind::Mock;
        cfg.id = "mock";
        cfg.model = "mock-model";
        cfg.cache_dir = std::move(cache_dir);
        return LmmClient(std::move(cfg), std::make_unique<MockBackendAdapter>(std::move(script)));
    }

    /// Decoding settings are owned by the backend config; every request is
    /// stamped uniformly before dispatch.
    LmmResponse complete(LmmRequest req) {
        if (req.backend_id.empty()) req.backend_id = cfg_.id;
        if (req.model.empty()) req.model = cfg_.model;
        req.temperature = cfg_.temperature;
        req.max_output_tokens = cfg_.max_output_tokens;
        validate_request(req);

        const std::string key = cache_key(req);
        if (!req.bypass_cache) {
            if (auto hit = cache_.lookup(key)) return *hit;
        }
        double t0 = clock_->now_s();
        LmmResponse res = backend_->call(req);
        res.latency_ms = static_cast<long long>((clock_->now_s() - t0) * 1000.0 + 0.5);
        if (res.latency_ms < 0) res.latency_ms = 0;
        res.cached = false;
        cache_.store(key, req.model, res);
        return res;
    }

    const BackendConfig& config() const { return cfg_; }

    /// Call counters when the underlying backend is the mock, else nullptr.
    MockBackend* mock() {
        auto* adapter = dynamic_cast<MockBackendAdapter*>(backend_.get());
        return adapter ? &adapter->mock() : nullptr;
    }

private:
    BackendConfig cfg_;
    std::unique_ptr<Backend> backend_;
    std::shared_ptr<Clock> clock_;
    ResponseCache cache_;
};

}  // namespace tsr::lmm
