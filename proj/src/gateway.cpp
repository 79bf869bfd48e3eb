#include "taxocap/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "taxocap/prompts.hpp"

namespace taxocap::llm {

using json = nlohmann::ordered_json;

namespace {

// Transport failures and 429/5xx statuses; everything else fails fast.
struct RetryableError : GatewayError {
    using GatewayError::GatewayError;
};

}  // namespace

void ChatRequest::validate() const {
    if (messages.empty()) throw GatewayError("request needs at least one message");
    if (temperature < 0.0) throw GatewayError("temperature must be >= 0");
    if (top_p <= 0.0 || top_p > 1.0) throw GatewayError("top_p must be in (0, 1]");
    if (max_tokens <= 0) throw GatewayError("max_tokens must be positive");
    for (const auto& msg : messages) {
        for (const auto& part : msg.parts) {
            if (part.kind == ContentPart::Kind::image && msg.role != "user") {
                throw GatewayError("image parts are only allowed in user messages");
            }
        }
    }
}

ChatRequest make_user_request(std::string model, std::string text,
                              std::optional<std::string> image_ref) {
    ChatRequest req;
    req.model = std::move(model);
    Message msg;
    msg.role = "user";
    msg.parts.push_back({ContentPart::Kind::text, std::move(text)});
    if (image_ref) msg.parts.push_back({ContentPart::Kind::image, std::move(*image_ref)});
    req.messages.push_back(std::move(msg));
    return req;
}

void SystemClock::sleep_for(std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
}

std::chrono::steady_clock::time_point ManualClock::now() {
    std::lock_guard lock(mutex_);
    return now_;
}

void ManualClock::sleep_for(std::chrono::milliseconds d) {
    std::lock_guard lock(mutex_);
    now_ += d;
}

std::string canonical_request_json(const ChatRequest& request) {
    json body;
    body["model"] = request.model;
    body["messages"] = json::array();
    for (const auto& msg : request.messages) {
        json parts = json::array();
        for (const auto& part : msg.parts) {
            if (part.kind == ContentPart::Kind::text) {
                parts.push_back({{"type", "text"}, {"text", part.value}});
            } else {
                parts.push_back({{"type", "image_url"}, {"image_url", {{"url", part.value}}}});
            }
        }
        body["messages"].push_back({{"role", msg.role}, {"content", parts}});
    }
    body["temperature"] = request.temperature;
    body["top_p"] = request.top_p;
    body["max_tokens"] = request.max_tokens;
    return body.dump();
}

std::string request_hash(const ChatRequest& request) {
    // FNV-1a, 64 bit.
    const std::string canonical = canonical_request_json(request);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : canonical) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

SequenceBackend::SequenceBackend(std::vector<BackendResponse> responses)
    : responses_(std::move(responses)) {}

BackendResponse SequenceBackend::send(const ChatRequest& request) {
    std::lock_guard lock(mutex_);
    seen_.push_back(request);
    if (next_ >= responses_.size()) {
        return {0, "", true, "scripted sequence exhausted"};
    }
    return responses_[next_++];
}

std::vector<ChatRequest> SequenceBackend::requests() const {
    std::lock_guard lock(mutex_);
    return seen_;
}

std::shared_ptr<ScriptedMockBackend> ScriptedMockBackend::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw GatewayError("cannot open mock script: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return std::make_shared<ScriptedMockBackend>(buf.str());
}

ScriptedMockBackend::ScriptedMockBackend(const std::string& jsonl_text) {
    std::istringstream in(jsonl_text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rule;
        try {
            rule = json::parse(line);
        } catch (const json::exception& e) {
            throw GatewayError("mock script line " + std::to_string(line_no) + ": " + e.what());
        }
        Rule r;
        r.match = rule.value("match", "");
        r.reply = rule.value("reply", "");
        r.status = rule.value("status", 200);
        r.remaining = rule.contains("times") ? rule["times"].get<long>() : -1;
        rules_.push_back(std::move(r));
    }
}

BackendResponse ScriptedMockBackend::send(const ChatRequest& request) {
    std::string prompt_text;
    for (const auto& msg : request.messages) {
        for (const auto& part : msg.parts) {
            if (part.kind == ContentPart::Kind::text) prompt_text += part.value;
        }
    }
    std::lock_guard lock(mutex_);
    for (auto& rule : rules_) {
        if (rule.remaining == 0) continue;
        if (!rule.match.empty() && prompt_text.find(rule.match) == std::string::npos) continue;
        if (rule.remaining > 0) --rule.remaining;
        if (rule.status != 200) {
            return {rule.status, R"({"error":"scripted"})", false, ""};
        }
        json body = {{"choices", {{{"message", {{"content", rule.reply}}}}}}};
        return {200, body.dump(), false, ""};
    }
    return {0, "", true, "no mock rule matched request"};
}

DirectoryMockBackend::DirectoryMockBackend(std::string dir) : dir_(std::move(dir)) {}

BackendResponse DirectoryMockBackend::send(const ChatRequest& request) {
    const std::string path = dir_ + "/" + request_hash(request) + ".txt";
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        return {0, "", true, "no canned reply at " + path};
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    json body = {{"choices", {{{"message", {{"content", buf.str()}}}}}}};
    return {200, body.dump(), false, ""};
}

RateLimiter::RateLimiter(int per_minute, std::shared_ptr<Clock> clock)
    : per_minute_(per_minute), clock_(std::move(clock)) {}

void RateLimiter::acquire() {
    while (true) {
        std::chrono::milliseconds wait{0};
        {
            std::lock_guard lock(mutex_);
            const auto now = clock_->now();
            while (!issued_.empty() && now - issued_.front() >= std::chrono::seconds(60)) {
                issued_.pop_front();
            }
            if (static_cast<int>(issued_.size()) < per_minute_) {
                issued_.push_back(now);
                return;
            }
            wait = std::chrono::duration_cast<std::chrono::milliseconds>(
                       issued_.front() + std::chrono::seconds(60) - now) +
                   std::chrono::milliseconds(1);
        }
        clock_->sleep_for(std::max(wait, std::chrono::milliseconds(1)));
    }
}

Gateway::Gateway(std::shared_ptr<ChatBackend> backend, BackendConfig config,
                 std::shared_ptr<Clock> clock)
    : backend_(std::move(backend)),
      config_(std::move(config)),
      clock_(clock),
      limiter_(config_.requests_per_minute, clock) {
    if (config_.max_concurrency < 1) throw GatewayError("max_concurrency must be >= 1");
    if (config_.requests_per_minute < 1) {
        throw GatewayError("requests_per_minute must be >= 1");
    }
    if (config_.retry.max_attempts < 1) throw GatewayError("max_attempts must be >= 1");
}

int Gateway::peak_in_flight() const {
    std::lock_guard lock(gate_mutex_);
    return peak_in_flight_;
}

std::uint64_t Gateway::total_requests() const {
    std::lock_guard lock(gate_mutex_);
    return total_requests_;
}

std::string Gateway::attempt_once(const ChatRequest& request, int attempt_index) {
    limiter_.acquire();
    {
        std::unique_lock lock(gate_mutex_);
        gate_cv_.wait(lock, [this] { return in_flight_ < config_.max_concurrency; });
        ++in_flight_;
        peak_in_flight_ = std::max(peak_in_flight_, in_flight_);
        ++total_requests_;
    }
    BackendResponse response;
    try {
        response = backend_->send(request);
    } catch (...) {
        std::lock_guard lock(gate_mutex_);
        --in_flight_;
        gate_cv_.notify_one();
        throw;
    }
    {
        std::lock_guard lock(gate_mutex_);
        --in_flight_;
        gate_cv_.notify_one();
    }

    if (response.transport_error) {
        throw RetryableError("transport: " + response.error);
    }
    if (response.status == 401 || response.status == 403) {
        throw AuthError("authentication failed (HTTP " + std::to_string(response.status) + ")");
    }
    if (response.status == 429 || response.status >= 500) {
        throw RetryableError("retryable HTTP " + std::to_string(response.status));
    }
    if (response.status != 200) {
        throw GatewayError("HTTP " + std::to_string(response.status) + " on attempt " +
                           std::to_string(attempt_index + 1));
    }
    json body;
    try {
        body = json::parse(response.body);
    } catch (const json::exception& e) {
        throw GatewayError(std::string("malformed response body: ") + e.what());
    }
    if (!body.contains("choices") || !body["choices"].is_array() || body["choices"].empty()) {
        throw GatewayError("response has no choices");
    }
    const auto& first = body["choices"][0];
    if (!first.contains("message") || !first["message"].contains("content") ||
        !first["message"]["content"].is_string()) {
        throw GatewayError("response missing text content");
    }
    return first["message"]["content"].get<std::string>();
}

std::string Gateway::complete(const ChatRequest& request) {
    request.validate();
    std::string last_error;
    for (int attempt = 0; attempt < config_.retry.max_attempts; ++attempt) {
        try {
            return attempt_once(request, attempt);
        } catch (const RetryableError& e) {
            last_error = e.what();
            if (attempt + 1 >= config_.retry.max_attempts) break;
            auto backoff = config_.retry.base_backoff * (1LL << attempt);
            // xorshift jitter keeps retries deterministic per gateway instance.
            std::uint64_t j;
            {
                std::lock_guard lock(gate_mutex_);
                jitter_state_ ^= jitter_state_ << 13;
                jitter_state_ ^= jitter_state_ >> 7;
                jitter_state_ ^= jitter_state_ << 17;
                j = jitter_state_;
            }
            const double unit = static_cast<double>(j >> 11) * 0x1.0p-53;  // [0,1)
            const double factor = 1.0 + config_.retry.jitter * (2.0 * unit - 1.0);
            clock_->sleep_for(std::chrono::milliseconds(
                static_cast<long long>(static_cast<double>(backoff.count()) * factor)));
        }
    }
    throw RetriesExhausted("gave up after " + std::to_string(config_.retry.max_attempts) +
                           " attempts: " + last_error);
}

std::vector<std::string> split_paragraph(const std::string& paragraph,
                                         std::size_t max_chars) {
    if (paragraph.size() <= max_chars) return {paragraph};
    std::vector<std::string> sentences;
    std::string current;
    for (std::size_t i = 0; i < paragraph.size(); ++i) {
        current.push_back(paragraph[i]);
        const char c = paragraph[i];
        const bool boundary = (c == '.' || c == '!' || c == '?') &&
                              (i + 1 == paragraph.size() || paragraph[i + 1] == ' ' ||
                               paragraph[i + 1] == '\n');
        if (boundary) {
            sentences.push_back(current);
            current.clear();
        }
    }
    if (!current.empty()) sentences.push_back(current);

    std::vector<std::string> chunks;
    std::string chunk;
    for (const auto& sentence : sentences) {
        if (!chunk.empty() && chunk.size() + sentence.size() > max_chars) {
            chunks.push_back(chunk);
            chunk.clear();
        }
        chunk += sentence;
        // A single sentence longer than the cap is split hard.
        while (chunk.size() > max_chars) {
            chunks.push_back(chunk.substr(0, max_chars));
            chunk = chunk.substr(max_chars);
        }
    }
    if (!chunk.empty()) chunks.push_back(chunk);
    return chunks;
}

namespace {

std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

// "yes"/"no" tolerant of surrounding quotes and trailing periods.
std::optional<bool> parse_yes_no(const std::string& reply) {
    std::string t = trim(reply);
    bool changed = true;
    while (changed && !t.empty()) {
        changed = false;
        if (t.size() >= 2 && t.front() == '"' && t.back() == '"') {
            t = trim(t.substr(1, t.size() - 2));
            changed = true;
        }
        if (!t.empty() && t.back() == '.') {
            t = trim(t.substr(0, t.size() - 1));
            changed = true;
        }
    }
    t = to_lower(t);
    if (t == "yes") return true;
    if (t == "no") return false;
    return std::nullopt;
}

bool verify_chunk(const std::string& chunk, Gateway& gateway) {
    const auto& config = gateway.config();
    ChatRequest req = make_user_request(config.verify_model_or_default(),
                                        prompts::render_verification(chunk));
    req.temperature = 0.0;
    for (int attempt = 0; attempt < config.retry.max_attempts; ++attempt) {
        const std::string reply = gateway.complete(req);
        if (const auto verdict = parse_yes_no(reply)) return *verdict;
    }
    throw UndecidedReply("verification reply did not parse as yes/no after " +
                         std::to_string(config.retry.max_attempts) + " asks");
}

}  // namespace

bool verify_visual(const std::string& paragraph, const std::string& species,
                   Gateway& gateway) {
    (void)species;  // the verification prompt classifies the text alone
    if (trim(paragraph).empty()) throw GatewayError("paragraph must be non-empty");
    const auto chunks = split_paragraph(paragraph, gateway.config().max_prompt_chars);
    for (const auto& chunk : chunks) {
        if (verify_chunk(chunk, gateway)) return true;
    }
    return false;
}

std::string extract_visual(const std::string& species, const std::string& paragraph,
                           Gateway& gateway) {
    const auto& config = gateway.config();
    const auto chunks = split_paragraph(paragraph, config.max_prompt_chars);
    std::string combined;
    for (const auto& chunk : chunks) {
        ChatRequest req = make_user_request(config.extract_model_or_default(),
                                            prompts::render_extraction(species, chunk));
        req.temperature = 0.0;

        std::string caption;
        bool ok = false;
        std::string reason;
        for (int attempt = 0; attempt < 2; ++attempt) {  // one re-ask
            const std::string reply = gateway.complete(req);
            const auto sep = reply.find(" | ");
            if (sep == std::string::npos) {
                reason = "reply has no \" | \" separator";
                continue;
            }
            const std::string echoed = trim(reply.substr(0, sep));
            if (to_lower(echoed) != to_lower(trim(species))) {
                reason = "species mismatch: expected \"" + species + "\", got \"" + echoed +
                         "\"";
                continue;
            }
            caption = trim(reply.substr(sep + 3));
            if (caption.empty()) {
                reason = "empty caption";
                continue;
            }
            ok = true;
            break;
        }
        if (!ok) throw FormatError("extraction failed: " + reason);
        if (!combined.empty()) combined += " ";
        combined += caption;
    }
    return combined;
}

HttpChatBackend::HttpChatBackend(const BackendConfig& config)
    : endpoint_(config.endpoint_url) {
    if (!config.api_key_env.empty()) {
        if (const char* key = std::getenv(config.api_key_env.c_str())) api_key_ = key;
    }
}

}  // namespace taxocap::llm
