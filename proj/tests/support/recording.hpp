// Backend wrapper that records every request for prompt/attachment asserts.

#pragma once

#include <memory>
#include <mutex>
#include <vector>

#include "tsr/lmm.hpp"

namespace tsr::test {

class RecordingBackend final : public lmm::Backend {
public:
    explicit RecordingBackend(lmm::MockScript script) : mock_(std::move(script)) {}

    lmm::LmmResponse call(const lmm::LmmRequest& req) override {
        {
            std::lock_guard lock(mu_);
            requests.push_back(req);
        }
        return mock_.call(req);
    }

    std::vector<lmm::LmmRequest> requests;
    lmm::MockBackend& mock() { return mock_; }

private:
    lmm::MockBackend mock_;
    std::mutex mu_;
};

/// Client whose backend records requests; the recorder stays owned by the
/// caller through the raw pointer.
inline std::pair<lmm::LmmClient, RecordingBackend*> make_recording_client(
    lmm::MockScript script, std::filesystem::path cache_dir = {}) {
    lmm::BackendConfig cfg;
    cfg.kind = lmm::BackendKind::Mock;
    cfg.id = "recording";
    cfg.model = "mock-model";
    cfg.cache_dir = std::move(cache_dir);
    auto backend = std::make_unique<RecordingBackend>(std::move(script));
    RecordingBackend* raw = backend.get();
    return {lmm::LmmClient(cfg, std::move(backend)), raw};
}

}  // namespace tsr::test
