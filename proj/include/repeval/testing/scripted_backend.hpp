#pragma once

// In-memory backend that replays a queue of scripted responses or errors.
// Keeps a log of every request it saw, for call-count assertions.

#include <deque>
#include <functional>
#include <mutex>
#include <variant>
#include <vector>

#include "repeval/backend.hpp"

namespace repeval::testing {

class ScriptedBackend : public ChatBackend {
public:
    struct ScriptedError {
        BackendError::Kind kind = BackendError::Kind::provider;
        int status = 500;
        std::string message = "scripted failure";
    };

    using Step = std::variant<ChatResponse, ScriptedError>;

    ChatResponse complete(const ChatRequest& request) override {
        std::lock_guard<std::mutex> lock(mutex_);
        requests_.push_back(request);
        if (steps_.empty()) throw Error("ScriptedBackend queue underflow");
        Step step = std::move(steps_.front());
        steps_.pop_front();
        if (std::holds_alternative<ScriptedError>(step)) {
            const auto& e = std::get<ScriptedError>(step);
            switch (e.kind) {
            case BackendError::Kind::timeout: throw TimeoutError(e.message);
            case BackendError::Kind::rate_limited: throw RateLimitedError(e.message);
            case BackendError::Kind::unreachable: throw UnreachableError(e.message);
            case BackendError::Kind::cache_miss: throw CacheMissError(e.message);
            case BackendError::Kind::storage: throw StorageError(e.message);
            default: throw ProviderError(e.status, e.message);
            }
        }
        return std::get<ChatResponse>(step);
    }

    void enqueue_content(std::string content, std::string model_id = "scripted") {
        ChatResponse r;
        r.content = std::move(content);
        r.model_id = std::move(model_id);
        enqueue(std::move(r));
    }

    void enqueue(ChatResponse response) {
        std::lock_guard<std::mutex> lock(mutex_);
        steps_.emplace_back(std::move(response));
    }

    void enqueue_error(BackendError::Kind kind, int status = 500,
                       std::string message = "scripted failure") {
        std::lock_guard<std::mutex> lock(mutex_);
        steps_.emplace_back(ScriptedError{kind, status, std::move(message)});
    }

    const std::vector<ChatRequest>& requests() const { return requests_; }
    std::size_t pending() const { return steps_.size(); }

private:
    std::deque<Step> steps_;
    std::vector<ChatRequest> requests_;
    mutable std::mutex mutex_;
};

/// Forwards to another backend and counts calls.
class CountingBackend : public ChatBackend {
public:
    explicit CountingBackend(ChatBackend& inner) : inner_(inner) {}

    ChatResponse complete(const ChatRequest& request) override {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            ++calls_;
        }
        return inner_.complete(request);
    }

    int calls() const { return calls_; }

private:
    ChatBackend& inner_;
    int calls_ = 0;
    std::mutex mutex_;
};

}  // namespace repeval::testing
