#pragma once

// Chat-completion backends: a live HTTP client speaking the de-facto
// chat-completions wire format, a content-addressed record/replay cache for
// deterministic offline runs, and retry with exponential backoff.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "repeval/core.hpp"
#include "repeval/io.hpp"

namespace repeval {

enum class Role { system, user, assistant };

inline std::string_view to_string(Role r) {
    switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    }
    throw Error("invalid Role");
}

inline std::optional<Role> role_from_string(std::string_view s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    return std::nullopt;
}

struct ChatMessage {
    Role role = Role::user;
    std::string content;

    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int max_tokens = 1024;
    std::map<std::string, std::string> extra;  // provider-specific fields

    friend bool operator==(const ChatRequest&, const ChatRequest&) = default;
};

struct ChatResponse {
    std::string content;  // provider text verbatim, untrimmed
    std::string model_id;
    long long prompt_tokens = 0;
    long long completion_tokens = 0;
    long long latency_ms = 0;

    friend bool operator==(const ChatResponse&, const ChatResponse&) = default;
};

// ---------------------------------------------------------------------------
// Errors, typed so retry policy can discriminate

class BackendError : public Error {
public:
    enum class Kind { timeout, rate_limited, provider, unreachable, cache_miss, storage };

    BackendError(Kind kind, const std::string& message, int status = 0, std::string body = "")
        : Error(message), kind_(kind), status_(status), body_(std::move(body)) {}

    Kind kind() const { return kind_; }
    int status() const { return status_; }
    const std::string& body() const { return body_; }

private:
    Kind kind_;
    int status_;
    std::string body_;
};

class TimeoutError : public BackendError {
public:
    explicit TimeoutError(const std::string& message)
        : BackendError(Kind::timeout, message) {}
};

class RateLimitedError : public BackendError {
public:
    explicit RateLimitedError(const std::string& message, std::string body = "")
        : BackendError(Kind::rate_limited, message, 429, std::move(body)) {}
};

class ProviderError : public BackendError {
public:
    ProviderError(int status, const std::string& message, std::string body = "")
        : BackendError(Kind::provider, message, status, std::move(body)) {}
};

class UnreachableError : public BackendError {
public:
    explicit UnreachableError(const std::string& message)
        : BackendError(Kind::unreachable, message) {}
};

class CacheMissError : public BackendError {
public:
    explicit CacheMissError(const std::string& message)
        : BackendError(Kind::cache_miss, message) {}
};

class StorageError : public BackendError {
public:
    explicit StorageError(const std::string& message)
        : BackendError(Kind::storage, message) {}
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Cache keys

inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 digest failed");
    static const char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * length);
    for (unsigned int i = 0; i < length; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

inline ojson canonical_request_json(const ChatRequest& r) {
    ojson j;
    j["model"] = r.model;
    ojson messages = ojson::array();
    for (const ChatMessage& m : r.messages)
        messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
    j["messages"] = std::move(messages);
    j["temperature"] = r.temperature;
    j["max_tokens"] = r.max_tokens;
    j["extra"] = r.extra;  // std::map iterates sorted, so order is canonical
    return j;
}

/// Deterministic content hash over (model, messages, temperature, max_tokens,
/// extra) with canonical field ordering.
inline std::string cache_key(const ChatRequest& request) {
    return sha256_hex(canonical_request_json(request).dump());
}

inline std::filesystem::path cache_entry_path(const std::filesystem::path& dir,
                                              const std::string& key) {
    return dir / key.substr(0, 2) / (key + ".json");
}

// ---------------------------------------------------------------------------
// Replay and recording

enum class ReplayMode { strict, permissive };

namespace detail {

inline std::optional<ChatResponse> read_cache_entry(const std::filesystem::path& dir,
                                                    const std::string& key) {
    const std::filesystem::path path = cache_entry_path(dir, key);
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    ojson j = ojson::parse(read_file(path), nullptr, false);
    if (j.is_discarded() || !j.contains("response"))
        throw StorageError("corrupt cache entry: " + path.string());
    const ojson& resp = j.at("response");
    ChatResponse out;
    out.content = resp.value("content", std::string());
    out.model_id = resp.value("model_id", std::string());
    out.prompt_tokens = resp.value("prompt_tokens", 0LL);
    out.completion_tokens = resp.value("completion_tokens", 0LL);
    out.latency_ms = resp.value("latency_ms", 0LL);
    return out;
}

inline std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void write_cache_entry(const std::filesystem::path& dir, const std::string& key,
                              const ChatRequest& request, const ChatResponse& response) {
    ojson j;
    j["request"] = canonical_request_json(request);
    ojson resp;
    resp["content"] = response.content;
    resp["model_id"] = response.model_id;
    resp["prompt_tokens"] = response.prompt_tokens;
    resp["completion_tokens"] = response.completion_tokens;
    resp["latency_ms"] = response.latency_ms;
    j["response"] = std::move(resp);
    j["recorded_at"] = utc_timestamp();
    try {
        write_file_atomic(cache_entry_path(dir, key), j.dump(2) + "\n");
    } catch (const IoError& e) {
        throw StorageError(e.what());
    }
}

}  // namespace detail

/// Serves recorded responses from a cache directory. In strict mode a miss is
/// an error; in permissive mode it falls through to the fallback backend when
/// one is attached.
class ReplayBackend : public ChatBackend {
public:
    explicit ReplayBackend(std::filesystem::path dir, ReplayMode mode = ReplayMode::strict,
                           ChatBackend* fallback = nullptr)
        : dir_(std::move(dir)), mode_(mode), fallback_(fallback) {}

    ChatResponse complete(const ChatRequest& request) override {
        const std::string key = cache_key(request);
        if (auto cached = detail::read_cache_entry(dir_, key)) return *cached;
        if (mode_ == ReplayMode::permissive && fallback_) return fallback_->complete(request);
        throw CacheMissError("no cached response for request key " + key + " (model " +
                             request.model + ")");
    }

private:
    std::filesystem::path dir_;
    ReplayMode mode_;
    ChatBackend* fallback_;
};

/// Pass-through to a live backend that persists every response as one JSON
/// file keyed by content hash; hits are served from disk without touching the
/// live backend again.
class RecordingBackend : public ChatBackend {
public:
    RecordingBackend(ChatBackend& inner, std::filesystem::path dir)
        : inner_(inner), dir_(std::move(dir)) {}

    ChatResponse complete(const ChatRequest& request) override {
        const std::string key = cache_key(request);
        if (auto cached = detail::read_cache_entry(dir_, key)) return *cached;
        ChatResponse response = inner_.complete(request);
        {
            // writes are atomic rename; identical concurrent requests are
            // last-writer-wins on the same path
            std::lock_guard<std::mutex> lock(write_mutex_);
            detail::write_cache_entry(dir_, key, request, response);
        }
        return response;
    }

private:
    ChatBackend& inner_;
    std::filesystem::path dir_;
    std::mutex write_mutex_;
};

// ---------------------------------------------------------------------------
// Retry

struct RetryPolicy {
    int max_attempts = 3;
    int base_delay_ms = 1000;
    double backoff = 2.0;
    bool retry_timeout = true;
    bool retry_rate_limited = true;
    bool retry_server_error = true;  // provider status >= 500
};

class RetryingBackend : public ChatBackend {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    RetryingBackend(ChatBackend& inner, RetryPolicy policy = {}, Sleeper sleeper = nullptr)
        : inner_(inner), policy_(policy),
          sleeper_(sleeper ? std::move(sleeper) : [](std::chrono::milliseconds d) {
              std::this_thread::sleep_for(d);
          }) {
        if (policy_.max_attempts < 1) throw Error("RetryPolicy.max_attempts must be >= 1");
    }

    ChatResponse complete(const ChatRequest& request) override {
        double delay = static_cast<double>(policy_.base_delay_ms);
        for (int attempt = 1;; ++attempt) {
            try {
                return inner_.complete(request);
            } catch (const BackendError& e) {
                if (!retryable(e) || attempt >= policy_.max_attempts) throw;
            }
            sleeper_(std::chrono::milliseconds(static_cast<long long>(delay)));
            delay *= policy_.backoff;
        }
    }

private:
    bool retryable(const BackendError& e) const {
        switch (e.kind()) {
        case BackendError::Kind::timeout: return policy_.retry_timeout;
        case BackendError::Kind::rate_limited: return policy_.retry_rate_limited;
        case BackendError::Kind::provider:
            return policy_.retry_server_error && e.status() >= 500;
        default: return false;
        }
    }

    ChatBackend& inner_;
    RetryPolicy policy_;
    Sleeper sleeper_;
};

// ---------------------------------------------------------------------------
// Live HTTP backend

struct HttpBackendConfig {
    std::string base_url;  // e.g. https://api.example.com/v1
    std::string api_key;
    int timeout_sec = 120;
    std::string completions_path = "/chat/completions";
};

namespace detail {

// "https://host:port/prefix" -> {"https://host:port", "/prefix"}
inline std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
    const std::size_t scheme = base_url.find("://");
    const std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
    const std::size_t slash = base_url.find('/', host_start);
    if (slash == std::string::npos) return {base_url, ""};
    std::string prefix = base_url.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {base_url.substr(0, slash), prefix};
}

}  // namespace detail

class HttpChatBackend : public ChatBackend {
public:
    explicit HttpChatBackend(HttpBackendConfig config) : config_(std::move(config)) {
        if (config_.base_url.empty()) throw Error("backend base_url is empty");
    }

    ChatResponse complete(const ChatRequest& request) override {
        ojson body;
        body["model"] = request.model;
        ojson messages = ojson::array();
        for (const ChatMessage& m : request.messages)
            messages.push_back(
                {{"role", std::string(to_string(m.role))}, {"content", m.content}});
        body["messages"] = std::move(messages);
        body["temperature"] = request.temperature;
        body["max_tokens"] = request.max_tokens;
        for (const auto& [key, value] : request.extra) {
            // numbers/booleans arrive as strings; pass structured values through
            ojson parsed = ojson::parse(value, nullptr, false);
            body[key] = parsed.is_discarded() ? ojson(value) : parsed;
        }

        auto [host, prefix] = detail::split_base_url(config_.base_url);
        httplib::Client client(host);
        client.set_connection_timeout(config_.timeout_sec, 0);
        client.set_read_timeout(config_.timeout_sec, 0);
        client.set_write_timeout(config_.timeout_sec, 0);
        httplib::Headers headers;
        if (!config_.api_key.empty())
            headers.emplace("Authorization", "Bearer " + config_.api_key);

        const auto started = std::chrono::steady_clock::now();
        httplib::Result result =
            client.Post(prefix + config_.completions_path, headers, body.dump(),
                        "application/json");
        const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - started)
                                 .count();

        if (!result) {
            const httplib::Error err = result.error();
            if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                err == httplib::Error::Write)
                throw TimeoutError("request timed out: " + httplib::to_string(err));
            throw UnreachableError("cannot reach " + config_.base_url + ": " +
                                   httplib::to_string(err));
        }
        if (result->status == 429)
            throw RateLimitedError("provider rate limited the request", result->body);
        if (result->status >= 500)
            throw ProviderError(result->status,
                                "provider error " + std::to_string(result->status),
                                result->body);
        if (result->status != 200)
            throw ProviderError(result->status,
                                "unexpected status " + std::to_string(result->status),
                                result->body);

        ojson j = ojson::parse(result->body, nullptr, false);
        if (j.is_discarded() || !j.contains("choices") || !j.at("choices").is_array() ||
            j.at("choices").empty())
            throw ProviderError(result->status, "malformed provider response", result->body);
        const ojson& first = j.at("choices").at(0);
        if (!first.contains("message") || !first.at("message").contains("content"))
            throw ProviderError(result->status, "malformed provider response", result->body);

        ChatResponse response;
        response.content = first.at("message").at("content").is_null()
                               ? std::string()
                               : first.at("message").at("content").get<std::string>();
        response.model_id = j.value("model", request.model);
        if (j.contains("usage") && j.at("usage").is_object()) {
            response.prompt_tokens = j.at("usage").value("prompt_tokens", 0LL);
            response.completion_tokens = j.at("usage").value("completion_tokens", 0LL);
        }
        response.latency_ms = elapsed;
        return response;
    }

private:
    HttpBackendConfig config_;
};

}  // namespace repeval
