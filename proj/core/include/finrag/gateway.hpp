#pragma once
// Chat-completion client contract for text-only and multimodal (images
// attached) generation, plus a fully scriptable mock so every pipeline
// stage is testable offline.

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "finrag/errors.hpp"

namespace finrag {

struct ChatRequest {
    std::string system;
    std::string user;
    std::vector<std::filesystem::path> image_paths;
    double temperature = 0.0; // deterministic by default
    int max_output_tokens = 2048;
    std::chrono::milliseconds timeout{120000};
};

struct ChatResponse {
    std::string text; // empty is treated as model failure upstream
    int prompt_tokens = 0;
    int completion_tokens = 0;
    std::chrono::milliseconds latency{0};
};

class ChatGateway {
public:
    virtual ~ChatGateway() = default;

    // One logical call: either yields one response or throws one
    // terminal error. Transport retries happen inside.
    virtual ChatResponse chat(const ChatRequest& req) = 0;

    // Total chat() invocations observed (for single-call contracts).
    virtual int calls() const = 0;

    // Transport attempts including retries; equals calls() for backends
    // that never retry.
    virtual int attempts() const { return calls(); }
};

struct GatewayOptions {
    int max_images = 5; // mirror of EngineConfig.batch_size
    int retry_limit = 2;
    std::chrono::milliseconds backoff_base{500}; // doubles per attempt
    int max_in_flight_multimodal = 2;
    int max_in_flight_text = 4;
};

// Substring-scripted mock: ordered (match_substring -> response) rules,
// first match wins; unmatched requests get `fallback_reply`. Thread-safe;
// records every request for assertions.
class ScriptedGateway final : public ChatGateway {
public:
    struct Rule {
        std::string match_substring;
        std::string response_text;
    };

    ScriptedGateway() = default;
    explicit ScriptedGateway(std::vector<Rule> rules) : rules_(std::move(rules)) {}
    explicit ScriptedGateway(const std::filesystem::path& script)
        : ScriptedGateway(load_script(script)) {}

    // JSONL file of {"match_substring": ..., "response_text": ...} rows.
    static std::vector<Rule> load_script(const std::filesystem::path& path);

    void add_rule(std::string match, std::string response);
    void set_fallback(std::string reply) { fallback_reply_ = std::move(reply); }

    ChatResponse chat(const ChatRequest& req) override;
    int calls() const override;

    std::vector<ChatRequest> requests() const;

private:
    mutable std::mutex mutex_;
    std::vector<Rule> rules_;
    std::string fallback_reply_ = "insufficient information";
    std::vector<ChatRequest> seen_;
    int calls_ = 0;
};

// HTTP client for a local model server. Wire shape: one POST of
// {model, system, prompt, images[], options{temperature, num_predict},
// stream:false}; images are base64-embedded. Retries transport errors
// with exponential backoff.
std::unique_ptr<ChatGateway> make_http_gateway(const std::string& endpoint_url,
                                               const std::string& model,
                                               GatewayOptions options = {});

} // namespace finrag
