// Scripted HTTP transport: plays back a status sequence and records calls.

#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tsr/lmm_http.hpp"

namespace tsr::test {

class FakeTransport final : public lmm::HttpTransport {
public:
    explicit FakeTransport(std::vector<int> statuses, std::shared_ptr<lmm::Clock> clock = nullptr,
                           std::string ok_body = R"({"choices":[{"message":{"content":"Stop"}}],)"
                                                 R"("usage":{"prompt_tokens":7,"completion_tokens":2}})")
        : statuses_(std::move(statuses)), clock_(std::move(clock)), ok_body_(std::move(ok_body)) {}

    lmm::HttpResult post(const std::string& url,
                         const std::vector<std::pair<std::string, std::string>>& headers,
                         const std::string& body, double) override {
        if (clock_) call_times.push_back(clock_->now_s());
        urls.push_back(url);
        bodies.push_back(body);
        auth.push_back(headers.empty() ? "" : headers.front().second);
        int status = call_count < statuses_.size() ? statuses_[call_count] : statuses_.back();
        ++call_count;
        lmm::HttpResult out;
        if (status == -1) {
            out.timed_out = true;
            return out;
        }
        out.status = status;
        out.body = status == 200 ? ok_body_ : R"({"error":"nope"})";
        return out;
    }

    size_t call_count = 0;
    std::vector<std::string> urls, bodies, auth;
    std::vector<double> call_times;

private:
    std::vector<int> statuses_;
    std::shared_ptr<lmm::Clock> clock_;
    std::string ok_body_;
};

}  // namespace tsr::test
