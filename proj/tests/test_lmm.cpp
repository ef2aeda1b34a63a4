#include <doctest.h>

#include <cstdlib>
#include <thread>

#include "support/fake_http.hpp"
#include "support/tempdir.hpp"
#include "tsr/attachments.hpp"
#include "tsr/lmm.hpp"
#include "tsr/lmm_http.hpp"

using namespace tsr;
using namespace tsr::lmm;
using tsr::test::FakeTransport;

namespace {

ImageAttachment tiny_attachment(uint8_t seed) {
    return ImageAttachment{"image/png", {seed, 1, 2, 3}};
}

LmmRequest basic_request() {
    LmmRequest req;
    req.system_prompt = "sys";
    req.backend_id = "b";
    req.model = "m";
    req.add_text("hello");
    req.add_image(tiny_attachment(9));
    return req;
}

BackendConfig remote_config(int rpm = 1000, int max_retries = 3) {
    BackendConfig cfg;
    cfg.kind = BackendKind::Remote;
    cfg.id = "remote-test";
    cfg.endpoint = "https://api.example.test/v1/chat/completions";
    cfg.model = "test-model";
    cfg.api_key_env = "TSR_TEST_KEY";
    cfg.requests_per_minute = rpm;
    cfg.max_retries = max_retries;
    return cfg;
}

struct EnvKey {
    EnvKey() { setenv("TSR_TEST_KEY", "secret-key", 1); }
    ~EnvKey() { unsetenv("TSR_TEST_KEY"); }
};

}  // namespace

TEST_CASE("cache keys are stable and content-sensitive") {
    LmmRequest a = basic_request();
    LmmRequest b = basic_request();
    CHECK(cache_key(a) == cache_key(b));

    SUBCASE("one changed image byte changes the key") {
        std::get<ImageAttachment>(b.user_parts[1]).bytes[0] ^= 1;
        CHECK(cache_key(a) != cache_key(b));
    }
    SUBCASE("reordered user parts change the key") {
        std::swap(b.user_parts[0], b.user_parts[1]);
        CHECK(cache_key(a) != cache_key(b));
    }
    SUBCASE("temperature changes the key") {
        b.temperature = 0.5;
        CHECK(cache_key(a) != cache_key(b));
    }
    SUBCASE("model and backend id change the key") {
        b.model = "m2";
        CHECK(cache_key(a) != cache_key(b));
        b = basic_request();
        b.backend_id = "b2";
        CHECK(cache_key(a) != cache_key(b));
    }
    SUBCASE("max_output_tokens does not change the key") {
        b.max_output_tokens = a.max_output_tokens + 100;
        CHECK(cache_key(a) == cache_key(b));
    }
}

TEST_CASE("request validation rejects malformed requests") {
    LmmRequest req;
    CHECK_THROWS_AS(validate_request(req), Error);  // no parts
    req.add_text("x");
    CHECK_NOTHROW(validate_request(req));
    req.temperature = 2.5;
    CHECK_THROWS_AS(validate_request(req), Error);
    req.temperature = 0;
    req.add_image(ImageAttachment{"image/png", {}});
    CHECK_THROWS_AS(validate_request(req), Error);  // empty bytes
}

TEST_CASE("mock backend matches rules by stage, prompt substring, and image digest") {
    MockScript script;
    script.default_response = "default";
    script.rules.push_back({"context", "", "", "ctx answer"});
    script.rules.push_back({"", "magic words", "", "prompt answer"});
    script.rules.push_back({"", "", sha256_hex(tiny_attachment(9).bytes), "digest answer"});
    MockBackend mock(script);

    LmmRequest req;
    req.stage = "context";
    req.add_text("anything");
    CHECK(mock.call(req).text == "ctx answer");

    req.stage = "multistep";
    CHECK(mock.call(req).text == "default");

    req.user_parts.clear();
    req.add_text("some magic words here");
    CHECK(mock.call(req).text == "prompt answer");

    req.user_parts.clear();
    req.add_text("x");
    req.add_image(tiny_attachment(9));
    CHECK(mock.call(req).text == "digest answer");

    CHECK(mock.total_calls() == 4);
    CHECK(mock.calls_for_stage("context") == 1);
    CHECK(mock.calls_for_stage("multistep") == 3);
}

TEST_CASE("cache returns byte-identical text and flags hits") {
    test::TempDir dir;
    MockScript script;
    script.default_response = "Stop";
    LmmClient client = LmmClient::make_mock(script, dir.path());

    LmmRequest req;
    req.add_text("what sign is this");
    LmmResponse first = client.complete(req);
    CHECK(first.text == "Stop");
    CHECK_FALSE(first.cached);

    LmmResponse second = client.complete(req);
    CHECK(second.cached);
    CHECK(second.text == first.text);
    CHECK(client.mock()->total_calls() == 1);

    SUBCASE("bypass_cache skips the lookup but still stores") {
        req.bypass_cache = true;
        LmmResponse third = client.complete(req);
        CHECK_FALSE(third.cached);
        CHECK(client.mock()->total_calls() == 2);
    }
}

TEST_CASE("remote backend retries 429 with backoff then succeeds") {
    EnvKey key;
    auto clock = std::make_shared<ManualClock>();
    auto transport = std::make_shared<FakeTransport>(std::vector<int>{429, 429, 200}, clock);
    RemoteBackend backend(remote_config(), transport, clock, 42);

    LmmResponse res = backend.call(basic_request());
    CHECK(res.text == "Stop");
    CHECK(res.retries == 2);
    CHECK(res.usage.input_tokens == 7);
    CHECK(transport->call_count == 3);
    // Backoff slept ~1*j then ~2*j virtual seconds between attempts.
    CHECK(transport->call_times[1] - transport->call_times[0] >= 0.5);
    CHECK(transport->call_times[2] - transport->call_times[1] >= 1.0);
    CHECK(transport->auth[0] == "Bearer secret-key");
}

TEST_CASE("remote backend error mapping") {
    EnvKey key;
    auto clock = std::make_shared<ManualClock>();

    SUBCASE("401 fails immediately without retry") {
        auto transport = std::make_shared<FakeTransport>(std::vector<int>{401}, clock);
        RemoteBackend backend(remote_config(), transport, clock, 1);
        try {
            backend.call(basic_request());
            FAIL("expected AuthError");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::AuthError);
        }
        CHECK(transport->call_count == 1);
    }
    SUBCASE("persistent 429 exhausts the budget") {
        auto transport = std::make_shared<FakeTransport>(std::vector<int>{429}, clock);
        RemoteBackend backend(remote_config(1000, 2), transport, clock, 1);
        try {
            backend.call(basic_request());
            FAIL("expected RateLimited");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::RateLimited);
        }
        CHECK(transport->call_count == 3);  // initial + 2 retries
    }
    SUBCASE("timeout surfaces as Timeout") {
        auto transport = std::make_shared<FakeTransport>(std::vector<int>{-1}, clock);
        RemoteBackend backend(remote_config(), transport, clock, 1);
        try {
            backend.call(basic_request());
            FAIL("expected Timeout");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::Timeout);
        }
    }
    SUBCASE("unparseable 200 body is MalformedResponse") {
        auto transport =
            std::make_shared<FakeTransport>(std::vector<int>{200}, clock, "not json at all");
        RemoteBackend backend(remote_config(), transport, clock, 1);
        try {
            backend.call(basic_request());
            FAIL("expected MalformedResponse");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::MalformedResponse);
        }
    }
    SUBCASE("missing API key is AuthError") {
        unsetenv("TSR_TEST_KEY");
        auto transport = std::make_shared<FakeTransport>(std::vector<int>{200}, clock);
        RemoteBackend backend(remote_config(), transport, clock, 1);
        try {
            backend.call(basic_request());
            FAIL("expected AuthError");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::AuthError);
        }
        CHECK(transport->call_count == 0);
    }
}

TEST_CASE("request rate never exceeds rpm in any 60s window (fake clock)") {
    EnvKey key;
    auto clock = std::make_shared<ManualClock>();
    const int rpm = 5;
    auto transport = std::make_shared<FakeTransport>(std::vector<int>{200}, clock);
    RemoteBackend backend(remote_config(rpm), transport, clock, 1);

    for (int i = 0; i < 23; ++i) {
        backend.call(basic_request());
        clock->advance(1.0);  // callers trickle in faster than the budget
    }
    REQUIRE(transport->call_times.size() == 23);
    const auto& t = transport->call_times;
    for (size_t i = 0; i < t.size(); ++i) {
        int in_window = 0;
        for (size_t k = 0; k < t.size(); ++k)
            if (t[k] >= t[i] && t[k] - t[i] < 60.0) ++in_window;
        CHECK(in_window <= rpm);
    }
    CHECK(std::is_sorted(t.begin(), t.end()));
}

TEST_CASE("chat body carries model, messages, and data-url images") {
    LmmRequest req = basic_request();
    req.temperature = 0.25;
    req.max_output_tokens = 77;
    json body = json::parse(build_chat_body(req));
    CHECK(body["model"] == "m");
    CHECK(body["temperature"] == 0.25);
    CHECK(body["max_tokens"] == 77);
    REQUIRE(body["messages"].size() == 2);
    CHECK(body["messages"][0]["role"] == "system");
    const json& content = body["messages"][1]["content"];
    REQUIRE(content.size() == 2);
    CHECK(content[0]["type"] == "text");
    CHECK(content[0]["text"] == "hello");
    CHECK(content[1]["type"] == "image_url");
    std::string url = content[1]["image_url"]["url"].get<std::string>();
    CHECK(url.rfind("data:image/png;base64,", 0) == 0);
}

TEST_CASE("remote round-trip against a live local server") {
    EnvKey key;
    httplib::Server server;
    std::string seen_body, seen_auth;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen_body = req.body;
        seen_auth = req.get_header_value("Authorization");
        res.set_content(R"({"choices":[{"message":{"content":"1. Stop\n2. Yield"}}],)"
                        R"("usage":{"prompt_tokens":11,"completion_tokens":6}})",
                        "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    BackendConfig cfg = remote_config();
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    LmmClient client = make_remote_client(cfg);

    LmmRequest req;
    req.add_text("classify this sign");
    req.add_image(tiny_attachment(3));
    LmmResponse res = client.complete(req);
    CHECK(res.text == "1. Stop\n2. Yield");
    CHECK(res.usage.output_tokens == 6);
    CHECK(seen_auth == "Bearer secret-key");
    CHECK(json::parse(seen_body)["model"] == "test-model");

    server.stop();
    server_thread.join();
}

TEST_CASE("road attachments are downscaled, crops left untouched") {
    Image big(1600, 900, Rgb{10, 20, 30});
    Image small_crop(40, 28, Rgb{1, 2, 3});

    Image scaled = downscale_longest_side(big, kRoadImageMaxSide);
    CHECK(scaled.width == 768);
    CHECK(scaled.height == 432);

    ImageAttachment road = encode_attachment(big, ImageRole::RoadScene);
    CHECK(road.bytes == encode_png(scaled));

    ImageAttachment crop = encode_attachment(small_crop, ImageRole::SignCrop);
    CHECK(crop.bytes == encode_png(small_crop));

    Image small_road(500, 300, Rgb{5, 5, 5});
    CHECK(encode_attachment(small_road, ImageRole::RoadScene).bytes == encode_png(small_road));
}
