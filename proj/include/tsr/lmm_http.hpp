/**
 * @file lmm_http.hpp
 * @brief Remote chat-completions backend over HTTP(S).
 *
 * Kept separate from lmm.hpp so only translation units that actually talk to
 * the network pay for the httplib include.
 */

#pragma once

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <cstdlib>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tsr/digest.hpp"
#include "tsr/lmm.hpp"

namespace tsr::lmm {

struct HttpResult {
    int status = 0;        // 0 when no response was received
    std::string body;
    bool timed_out = false;
    std::string transport_error;  // non-empty on connection-level failure
};

/// Transport seam: the real httplib client in production, a scripted fake in
/// tests.
class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResult post(const std::string& url,
                            const std::vector<std::pair<std::string, std::string>>& headers,
                            const std::string& body, double timeout_s) = 0;
};

class HttplibTransport final : public HttpTransport {
public:
    HttpResult post(const std::string& url,
                    const std::vector<std::pair<std::string, std::string>>& headers,
                    const std::string& body, double timeout_s) override {
        auto split = split_url(url);
        httplib::Client client(split.first);
        client.set_connection_timeout(std::chrono::duration<double>(timeout_s));
        client.set_read_timeout(std::chrono::duration<double>(timeout_s));
        client.set_write_timeout(std::chrono::duration<double>(timeout_s));
        httplib::Headers hdrs;
        for (const auto& [k, v] : headers) hdrs.emplace(k, v);
        auto res = client.Post(split.second, hdrs, body, "application/json");
        HttpResult out;
        if (!res) {
            auto err = res.error();
            out.timed_out = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                            err == httplib::Error::Write;
            out.transport_error = httplib::to_string(err);
            return out;
        }
        out.status = res->status;
        out.body = res->body;
        return out;
    }

private:
    // "https://host:port/path" -> {"https://host:port", "/path"}
    static std::pair<std::string, std::string> split_url(const std::string& url) {
        auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos)
            raise(ErrorCode::ConfigViolation, "endpoint must be a full URL: " + url);
        auto path_start = url.find('/', scheme_end + 3);
        if (path_start == std::string::npos) return {url, "/"};
        return {url.substr(0, path_start), url.substr(path_start)};
    }
};

/// Chat-completions request body: model, messages with text + base64 image
/// parts, temperature, max_tokens.
inline std::string build_chat_body(const LmmRequest& req) {
    json body;
    body["model"] = req.model;
    body["temperature"] = req.temperature;
    body["max_tokens"] = req.max_output_tokens;
    json messages = json::array();
    if (!req.system_prompt.empty())
        messages.push_back({{"role", "system"}, {"content", req.system_prompt}});
    json content = json::array();
    for (const UserPart& part : req.user_parts) {
        if (const auto* text = std::get_if<std::string>(&part))
            content.push_back({{"type", "text"}, {"text", *text}});
        else {
            const auto& img = std::get<ImageAttachment>(part);
            std::string url = "data:" + img.media_type + ";base64," + base64_encode(img.bytes);
            content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
        }
    }
    messages.push_back({{"role", "user"}, {"content", std::move(content)}});
    body["messages"] = std::move(messages);
    return body.dump();
}

inline LmmResponse parse_chat_response(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        raise(ErrorCode::MalformedResponse, std::string("response is not JSON: ") + e.what());
    }
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
        raise(ErrorCode::MalformedResponse, "response has no choices");
    const json& msg = j["choices"][0].value("message", json::object());
    if (!msg.contains("content") || !msg["content"].is_string())
        raise(ErrorCode::MalformedResponse, "choice has no message content");
    LmmResponse res;
    res.text = msg["content"].get<std::string>();
    if (res.text.empty()) raise(ErrorCode::MalformedResponse, "empty completion text");
    if (j.contains("usage")) {
        res.usage.input_tokens = j["usage"].value("prompt_tokens", 0LL);
        res.usage.output_tokens = j["usage"].value("completion_tokens", 0LL);
    }
    return res;
}

/**
 * One HTTP round-trip per attempt with exponential backoff (base 1 s, factor
 * 2, multiplicative jitter in [0.5, 1.5)) on 429 and 5xx, honoring the
 * requests-per-minute window. 401/403 fail immediately.
 */
class RemoteBackend final : public Backend {
public:
    RemoteBackend(BackendConfig cfg, std::shared_ptr<HttpTransport> transport,
                  std::shared_ptr<Clock> clock, uint64_t jitter_seed = std::random_device{}())
        : cfg_(std::move(cfg)),
          transport_(std::move(transport)),
          clock_(std::move(clock)),
          limiter_(cfg_.requests_per_minute, clock_),
          rng_(jitter_seed) {
        cfg_.validate();
    }

    LmmResponse call(const LmmRequest& req) override {
        const char* key = std::getenv(cfg_.api_key_env.c_str());
        if (key == nullptr || key[0] == '\0')
            raise(ErrorCode::AuthError, "API key env var not set: " + cfg_.api_key_env);

        std::vector<std::pair<std::string, std::string>> headers{
            {"Authorization", std::string("Bearer ") + key}};
        const std::string body = build_chat_body(req);

        int attempt = 0;
        for (;;) {
            limiter_.acquire();
            HttpResult http = transport_->post(cfg_.endpoint, headers, body, cfg_.timeout_s);

            if (http.timed_out) raise(ErrorCode::Timeout, "request timed out");
            if (http.status == 401 || http.status == 403)
                raise(ErrorCode::AuthError, "endpoint returned " + std::to_string(http.status));
            if (http.status == 200) {
                LmmResponse res = parse_chat_response(http.body);
                res.retries = attempt;
                return res;
            }

            bool transient = http.status == 429 || http.status >= 500 || http.status == 0;
            if (!transient)
                raise(ErrorCode::MalformedResponse,
                      "endpoint returned " + std::to_string(http.status) + ": " + http.body);
            if (attempt >= cfg_.max_retries) {
                if (http.status == 429)
                    raise(ErrorCode::RateLimited,
                          "budget exhausted after " + std::to_string(attempt) + " retries");
                raise(ErrorCode::Timeout, "gave up after " + std::to_string(attempt) + " retries (" +
                                              (http.status ? std::to_string(http.status)
                                                           : http.transport_error) +
                                              ")");
            }
            clock_->sleep_s(backoff_s(attempt));
            ++attempt;
        }
    }

private:
    double backoff_s(int attempt) {
        double base = 1.0;
        for (int i = 0; i < attempt; ++i) base *= 2.0;
        double jitter;
        {
            std::lock_guard lock(mu_);
            jitter = std::uniform_real_distribution<double>(0.5, 1.5)(rng_);
        }
        return base * jitter;
    }

    BackendConfig cfg_;
    std::shared_ptr<HttpTransport> transport_;
    std::shared_ptr<Clock> clock_;
    RateLimiter limiter_;
    std::mt19937_64 rng_;
    std::mutex mu_;
};

/// Remote client wired with the real transport and system clock.
inline LmmClient make_remote_client(BackendConfig cfg) {
    auto clock = std::make_shared<SystemClock>();
    auto backend = std::make_unique<RemoteBackend>(cfg, std::make_shared<HttplibTransport>(), clock);
    return LmmClient(std::move(cfg), std::move(backend), clock);
}

}  // namespace tsr::lmm
