#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace taxocap::llm {

struct ContentPart {
    enum class Kind { text, image };
    Kind kind = Kind::text;
    std::string value;  // text body or image reference
};

struct Message {
    std::string role;  // "system" | "user" | "assistant"
    std::vector<ContentPart> parts;
};

struct ChatRequest {
    std::string model;
    std::vector<Message> messages;
    double temperature = 0.0;
    double top_p = 1.0;
    int max_tokens = 512;

    void validate() const;
};

// Single user message with a text part (and optionally an image part).
ChatRequest make_user_request(std::string model, std::string text,
                              std::optional<std::string> image_ref = std::nullopt);

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds base_backoff{250};  // doubles per attempt
    double jitter = 0.1;                          // +- fraction of the backoff
};

struct BackendConfig {
    std::string endpoint_url;
    std::string api_key_env = "TAXOCAP_API_KEY";
    int max_concurrency = 8;
    int requests_per_minute = 600;
    RetryPolicy retry;
    std::string model = "default";
    std::string verify_model;   // falls back to `model` when empty
    std::string extract_model;  // falls back to `model` when empty
    double temperature = 0.6;   // caption-generation sampling; verification
    double top_p = 0.8;         // and extraction always send temperature 0
    int max_tokens = 512;
    // Paragraphs longer than this are split on sentence boundaries and
    // verified per chunk (OR of verdicts).
    std::size_t max_prompt_chars = 8000;

    std::string verify_model_or_default() const {
        return verify_model.empty() ? model : verify_model;
    }
    std::string extract_model_or_default() const {
        return extract_model.empty() ? model : extract_model;
    }
};

struct GatewayError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AuthError : GatewayError {
    using GatewayError::GatewayError;
};
struct RetriesExhausted : GatewayError {
    using GatewayError::GatewayError;
};
// Reply did not parse as the strict yes/no after the allowed re-asks.
struct UndecidedReply : GatewayError {
    using GatewayError::GatewayError;
};
// Reply did not match "<species> | <caption>" (or species mismatched).
struct FormatError : GatewayError {
    using GatewayError::GatewayError;
};

// Injectable clock so the rate limiter is testable without real waiting.
class Clock {
public:
    virtual ~Clock() = default;
    virtual std::chrono::steady_clock::time_point now() = 0;
    virtual void sleep_for(std::chrono::milliseconds d) = 0;
};

class SystemClock : public Clock {
public:
    std::chrono::steady_clock::time_point now() override {
        return std::chrono::steady_clock::now();
    }
    void sleep_for(std::chrono::milliseconds d) override;
};

class ManualClock : public Clock {
public:
    std::chrono::steady_clock::time_point now() override;
    void sleep_for(std::chrono::milliseconds d) override;

private:
    std::mutex mutex_;
    std::chrono::steady_clock::time_point now_{};
};

// Raw transport result before response-body interpretation. `transport_error`
// models a failed connection (no HTTP status at all).
struct BackendResponse {
    int status = 0;
    std::string body;
    bool transport_error = false;
    std::string error;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual BackendResponse send(const ChatRequest& request) = 0;
};

// OpenAI-style chat-completions JSON over HTTP. The API key is read from the
// environment variable named in the config; an empty name sends no auth
// header (local vLLM-style servers).
class HttpChatBackend : public ChatBackend {
public:
    explicit HttpChatBackend(const BackendConfig& config);
    BackendResponse send(const ChatRequest& request) override;

private:
    std::string endpoint_;
    std::string api_key_;
};

// Scripted in-memory responses consumed in order; for retry-path tests.
class SequenceBackend : public ChatBackend {
public:
    explicit SequenceBackend(std::vector<BackendResponse> responses);
    BackendResponse send(const ChatRequest& request) override;
    std::vector<ChatRequest> requests() const;

private:
    mutable std::mutex mutex_;
    std::vector<BackendResponse> responses_;
    std::size_t next_ = 0;
    std::vector<ChatRequest> seen_;
};

// Rule-scripted mock read from a JSONL file. Each rule may carry:
//   match:  substring of the rendered prompt text (absent = match all)
//   reply:  assistant text returned (wrapped in a chat-completion body)
//   status: HTTP status (default 200)
//   times:  uses before the rule expires (absent = unlimited)
// First live matching rule wins. Content-keyed rules keep concurrent runs
// deterministic.
class ScriptedMockBackend : public ChatBackend {
public:
    static std::shared_ptr<ScriptedMockBackend> from_file(const std::string& path);
    explicit ScriptedMockBackend(const std::string& jsonl_text);
    BackendResponse send(const ChatRequest& request) override;

private:
    struct Rule {
        std::string match;
        std::string reply;
        int status = 200;
        long remaining = -1;  // -1 = unlimited
    };
    std::mutex mutex_;
    std::vector<Rule> rules_;
};

// Directory of canned replies keyed by the FNV-1a hash of the canonical
// request JSON: <dir>/<hash>.txt holds the assistant text.
class DirectoryMockBackend : public ChatBackend {
public:
    explicit DirectoryMockBackend(std::string dir);
    BackendResponse send(const ChatRequest& request) override;

private:
    std::string dir_;
};

std::string canonical_request_json(const ChatRequest& request);
std::string request_hash(const ChatRequest& request);

// Sliding-window limiter: at most `per_minute` permits in any 60 s window.
class RateLimiter {
public:
    RateLimiter(int per_minute, std::shared_ptr<Clock> clock);
    void acquire();

private:
    int per_minute_;
    std::shared_ptr<Clock> clock_;
    std::mutex mutex_;
    std::deque<std::chrono::steady_clock::time_point> issued_;
};

class Gateway {
public:
    Gateway(std::shared_ptr<ChatBackend> backend, BackendConfig config,
            std::shared_ptr<Clock> clock = std::make_shared<SystemClock>());

    // First choice's text content; retries transport errors and 429/5xx with
    // exponential backoff, never other 4xx. 401/403 raise AuthError at once.
    std::string complete(const ChatRequest& request);

    const BackendConfig& config() const { return config_; }
    int peak_in_flight() const;
    std::uint64_t total_requests() const;

private:
    std::string attempt_once(const ChatRequest& request, int attempt_index);

    std::shared_ptr<ChatBackend> backend_;
    BackendConfig config_;
    std::shared_ptr<Clock> clock_;
    RateLimiter limiter_;
    mutable std::mutex gate_mutex_;
    std::condition_variable gate_cv_;
    int in_flight_ = 0;
    int peak_in_flight_ = 0;
    std::uint64_t total_requests_ = 0;
    std::uint64_t jitter_state_ = 0x9e3779b97f4a7c15ull;
};

// Renders the verification prompt for the paragraph (chunked on sentence
// boundaries when over the configured length), sends at temperature 0, and
// parses the strict yes/no reply. Verdicts of multiple chunks are OR-ed.
bool verify_visual(const std::string& paragraph, const std::string& species,
                   Gateway& gateway);

// Renders the extraction prompt and parses "<species> | <caption>". The
// species echo must match case-insensitively (one re-ask), and the caption
// must be non-empty.
std::string extract_visual(const std::string& species, const std::string& paragraph,
                           Gateway& gateway);

// Sentence-boundary chunking used for over-length paragraphs.
std::vector<std::string> split_paragraph(const std::string& paragraph,
                                         std::size_t max_chars);

}  // namespace taxocap::llm
