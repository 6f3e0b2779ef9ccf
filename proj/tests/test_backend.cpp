#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>
#include <set>
#include <thread>

#include "repeval/backend.hpp"
#include "repeval/testing/scripted_backend.hpp"

using namespace repeval;
namespace fs = std::filesystem;

namespace {

ChatRequest sample_request() {
    ChatRequest r;
    r.model = "gpt-4";
    r.messages = {{Role::system, "You compare radiology reports."},
                  {Role::user, "Reference: ... Candidate: ..."}};
    r.temperature = 0.0;
    r.max_tokens = 800;
    return r;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("repeval-test-" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

}  // namespace

TEST_CASE("cache_key is deterministic and covers every request field") {
    const ChatRequest base = sample_request();
    CHECK(cache_key(base) == cache_key(base));
    CHECK(cache_key(base).size() == 64);  // sha-256 hex

    ChatRequest hotter = base;
    hotter.temperature = 0.7;
    CHECK(cache_key(hotter) != cache_key(base));

    ChatRequest other_model = base;
    other_model.model = "gpt-3.5-turbo";
    CHECK(cache_key(other_model) != cache_key(base));

    ChatRequest other_tokens = base;
    other_tokens.max_tokens = 801;
    CHECK(cache_key(other_tokens) != cache_key(base));

    ChatRequest other_text = base;
    other_text.messages[1].content += "!";
    CHECK(cache_key(other_text) != cache_key(base));
}

TEST_CASE("cache_key is insensitive to extra-map insertion order") {
    ChatRequest a = sample_request();
    a.extra.emplace("seed", "11");
    a.extra.emplace("top_p", "0.9");
    ChatRequest b = sample_request();
    b.extra.emplace("top_p", "0.9");
    b.extra.emplace("seed", "11");
    CHECK(cache_key(a) == cache_key(b));
    ChatRequest c = a;
    c.extra["seed"] = "12";
    CHECK(cache_key(c) != cache_key(a));
}

TEST_CASE("cache_key has no collisions across randomized requests") {
    std::mt19937_64 rng(97);
    std::uniform_int_distribution<int> len(1, 40), tokens(1, 4096), temp(0, 20);
    std::set<std::string> keys;
    const int rounds = 50000;
    for (int i = 0; i < rounds; ++i) {
        ChatRequest r;
        r.model = "model-" + std::to_string(rng() % 8);
        std::string content;
        for (int k = len(rng); k > 0; --k) content += static_cast<char>('a' + rng() % 26);
        r.messages = {{Role::user, content + "#" + std::to_string(i)}};
        r.temperature = temp(rng) / 10.0;
        r.max_tokens = tokens(rng);
        keys.insert(cache_key(r));
    }
    CHECK(keys.size() == static_cast<std::size_t>(rounds));
}

TEST_CASE("record then replay returns the identical response") {
    TempDir dir;
    testing::ScriptedBackend inner;
    inner.enqueue_content("{\"errors\": []}", "gpt-4-0613");

    RecordingBackend recorder(inner, dir.path);
    const ChatRequest request = sample_request();
    ChatResponse live = recorder.complete(request);
    CHECK(live.content == "{\"errors\": []}");

    ReplayBackend replay(dir.path, ReplayMode::strict);
    ChatResponse cached = replay.complete(request);
    CHECK(cached.content == live.content);
    CHECK(cached.model_id == live.model_id);
    CHECK(inner.requests().size() == 1);  // replay never touched the live backend
}

TEST_CASE("recording backend serves cache hits without a live call") {
    TempDir dir;
    testing::ScriptedBackend inner;
    inner.enqueue_content("first");
    RecordingBackend recorder(inner, dir.path);
    const ChatRequest request = sample_request();
    CHECK(recorder.complete(request).content == "first");
    CHECK(recorder.complete(request).content == "first");
    CHECK(inner.requests().size() == 1);
    CHECK(inner.pending() == 0);
}

TEST_CASE("replay in strict mode fails on a cache miss") {
    TempDir dir;
    ReplayBackend replay(dir.path, ReplayMode::strict);
    CHECK_THROWS_AS(replay.complete(sample_request()), CacheMissError);
}

TEST_CASE("replay in permissive mode falls through to the fallback") {
    TempDir dir;
    testing::ScriptedBackend fallback;
    fallback.enqueue_content("live answer");
    ReplayBackend replay(dir.path, ReplayMode::permissive, &fallback);
    CHECK(replay.complete(sample_request()).content == "live answer");
    // without a fallback the miss is still an error
    ReplayBackend lonely(dir.path, ReplayMode::permissive);
    CHECK_THROWS_AS(lonely.complete(sample_request()), CacheMissError);
}

TEST_CASE("concurrent identical requests end up as exactly one cache file") {
    TempDir dir;
    testing::ScriptedBackend inner;
    for (int i = 0; i < 8; ++i) inner.enqueue_content("same response");
    RecordingBackend recorder(inner, dir.path);
    const ChatRequest request = sample_request();

    std::vector<std::thread> workers;
    for (int i = 0; i < 8; ++i)
        workers.emplace_back([&] { CHECK(recorder.complete(request).content == "same response"); });
    for (auto& w : workers) w.join();

    int files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(dir.path))
        if (entry.is_regular_file()) ++files;
    CHECK(files == 1);
    CHECK(detail::read_cache_entry(dir.path, cache_key(request))->content == "same response");
}

TEST_CASE("retry succeeds after transient rate limiting with exponential sleeps") {
    testing::ScriptedBackend inner;
    inner.enqueue_error(BackendError::Kind::rate_limited, 429);
    inner.enqueue_error(BackendError::Kind::rate_limited, 429);
    inner.enqueue_content("ok");

    std::vector<long long> sleeps;
    RetryingBackend retrying(inner, RetryPolicy{}, [&](std::chrono::milliseconds d) {
        sleeps.push_back(d.count());
    });
    CHECK(retrying.complete(sample_request()).content == "ok");
    CHECK(inner.requests().size() == 3);
    CHECK(sleeps == std::vector<long long>{1000, 2000});
}

TEST_CASE("cumulative retry sleep is base times 2^k minus 1") {
    testing::ScriptedBackend inner;
    for (int i = 0; i < 3; ++i) inner.enqueue_error(BackendError::Kind::timeout);
    inner.enqueue_content("ok");
    RetryPolicy policy;
    policy.max_attempts = 4;
    policy.base_delay_ms = 250;
    long long total = 0;
    RetryingBackend retrying(inner, policy,
                             [&](std::chrono::milliseconds d) { total += d.count(); });
    CHECK(retrying.complete(sample_request()).content == "ok");
    CHECK(total == 250 * ((1 << 3) - 1));
}

TEST_CASE("retry never exceeds max_attempts") {
    testing::ScriptedBackend inner;
    for (int i = 0; i < 5; ++i) inner.enqueue_error(BackendError::Kind::rate_limited, 429);
    int sleep_count = 0;
    RetryingBackend retrying(inner, RetryPolicy{},
                             [&](std::chrono::milliseconds) { ++sleep_count; });
    CHECK_THROWS_AS(retrying.complete(sample_request()), RateLimitedError);
    CHECK(inner.requests().size() == 3);
    CHECK(sleep_count == 2);
}

TEST_CASE("non-retryable errors propagate immediately") {
    testing::ScriptedBackend inner;
    inner.enqueue_error(BackendError::Kind::provider, 400, "bad request");
    int sleep_count = 0;
    RetryingBackend retrying(inner, RetryPolicy{},
                             [&](std::chrono::milliseconds) { ++sleep_count; });
    CHECK_THROWS_AS(retrying.complete(sample_request()), ProviderError);
    CHECK(inner.requests().size() == 1);
    CHECK(sleep_count == 0);

    testing::ScriptedBackend misses;
    misses.enqueue_error(BackendError::Kind::cache_miss);
    RetryingBackend retrying_miss(misses, RetryPolicy{},
                                  [&](std::chrono::milliseconds) { ++sleep_count; });
    CHECK_THROWS_AS(retrying_miss.complete(sample_request()), CacheMissError);
    CHECK(sleep_count == 0);
}

TEST_CASE("live backend speaks the chat-completions wire format") {
    httplib::Server server;
    int hits = 0;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        if (hits == 1) {
            res.status = 429;
            res.set_content("slow down", "text/plain");
            return;
        }
        ojson body = ojson::parse(req.body);
        REQUIRE(body.at("model") == "gpt-4");
        REQUIRE(body.at("messages").size() == 2);
        REQUIRE(req.get_header_value("Authorization") == "Bearer test-key");
        ojson reply = {
            {"model", "stub-gpt-4"},
            {"choices", ojson::array({{{"message", {{"role", "assistant"},
                                                    {"content", "stubbed answer"}}}}})},
            {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 3}}},
        };
        res.set_content(reply.dump(), "application/json");
    });
    server.Post("/v1/broken", [](const httplib::Request&, httplib::Response& res) {
        res.status = 500;
    });

    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpBackendConfig config;
    config.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    config.api_key = "test-key";
    config.timeout_sec = 10;
    HttpChatBackend live(config);

    SECTION("429 then 200 under retry policy") {
        int sleep_count = 0;
        RetryingBackend retrying(live, RetryPolicy{},
                                 [&](std::chrono::milliseconds) { ++sleep_count; });
        ChatResponse response = retrying.complete(sample_request());
        CHECK(response.content == "stubbed answer");
        CHECK(response.model_id == "stub-gpt-4");
        CHECK(response.prompt_tokens == 12);
        CHECK(response.completion_tokens == 3);
        CHECK(sleep_count == 1);
        CHECK(hits == 2);
    }

    SECTION("server errors carry their status") {
        HttpBackendConfig broken = config;
        broken.completions_path = "/broken";
        HttpChatBackend backend(broken);
        try {
            backend.complete(sample_request());
            FAIL("expected ProviderError");
        } catch (const ProviderError& e) {
            CHECK(e.status() == 500);
        }
    }

    server.stop();
    server_thread.join();
}

TEST_CASE("unreachable hosts raise a typed error") {
    HttpBackendConfig config;
    config.base_url = "http://127.0.0.1:1";  // nothing listens here
    config.timeout_sec = 2;
    HttpChatBackend backend(config);
    CHECK_THROWS_AS(backend.complete(sample_request()), BackendError);
}
