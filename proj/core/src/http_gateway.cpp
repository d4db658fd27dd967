#include <atomic>
#include <fstream>
#include <semaphore>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "finrag/gateway.hpp"

namespace finrag {
namespace {

using nlohmann::json;

std::string base64_encode(const std::string& bytes) {
    static const char table[] =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 2 < bytes.size()) {
        const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                           (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                           static_cast<unsigned char>(bytes[i + 2]);
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += table[(v >> 6) & 63];
        out += table[v & 63];
        i += 3;
    }
    if (i + 1 == bytes.size()) {
        const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == bytes.size()) {
        const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                           (static_cast<unsigned char>(bytes[i + 1]) << 8);
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += table[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw InputError("cannot read image file: " + path.string());
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
}

struct Endpoint {
    std::string host_port;
    std::string path;
};

Endpoint parse_endpoint(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("gateway endpoint must include a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos)
        return {url, "/api/generate"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

class HttpChatGateway final : public ChatGateway {
public:
    HttpChatGateway(std::string url, std::string model, GatewayOptions options)
        : endpoint_(parse_endpoint(url)), model_(std::move(model)), options_(options),
          multimodal_slots_(std::clamp(options.max_in_flight_multimodal, 1, 64)),
          text_slots_(std::clamp(options.max_in_flight_text, 1, 64)) {}

    ChatResponse chat(const ChatRequest& req) override {
        if (static_cast<int>(req.image_paths.size()) > options_.max_images)
            throw InputError("request carries " + std::to_string(req.image_paths.size()) +
                             " images, limit is " + std::to_string(options_.max_images));
        calls_.fetch_add(1);

        json body;
        body["model"] = model_;
        body["system"] = req.system;
        body["prompt"] = req.user;
        body["stream"] = false;
        body["options"] = {{"temperature", req.temperature},
                           {"num_predict", req.max_output_tokens}};
        body["images"] = json::array();
        for (const auto& p : req.image_paths)
            body["images"].push_back(base64_encode(read_file_bytes(p)));
        const std::string payload = body.dump();

        auto& slots = req.image_paths.empty() ? text_slots_ : multimodal_slots_;
        const auto start = std::chrono::steady_clock::now();

        std::string last_error;
        for (int attempt = 0; attempt <= options_.retry_limit; ++attempt) {
            if (attempt > 0) {
                const auto delay = options_.backoff_base * (1LL << (attempt - 1));
                std::this_thread::sleep_for(delay);
            }
            attempts_.fetch_add(1);

            slots.acquire();
            httplib::Client client(endpoint_.host_port);
            const auto secs =
                std::chrono::duration_cast<std::chrono::seconds>(req.timeout);
            client.set_read_timeout(std::max<long>(1, secs.count()), 0);
            client.set_connection_timeout(std::max<long>(1, secs.count()), 0);
            auto res = client.Post(endpoint_.path, payload, "application/json");
            slots.release();

            if (!res) {
                last_error = "connection failed: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 500) {
                last_error = "server error " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                throw TransportError("model server returned status " +
                                     std::to_string(res->status));
            return parse_reply(res->body, start);
        }
        throw TransportError("chat request failed after " +
                             std::to_string(options_.retry_limit + 1) +
                             " attempts: " + last_error);
    }

    int calls() const override { return calls_.load(); }
    int attempts() const override { return attempts_.load(); }

private:
    ChatResponse parse_reply(const std::string& body,
                             std::chrono::steady_clock::time_point start) const {
        json reply = json::parse(body, nullptr, false);
        if (reply.is_discarded())
            throw TransportError("model server reply is not JSON");
        ChatResponse out;
        if (reply.contains("response") && reply["response"].is_string())
            out.text = reply["response"].get<std::string>();
        else if (reply.contains("text") && reply["text"].is_string())
            out.text = reply["text"].get<std::string>();
        else
            throw TransportError("model server reply has no response/text field");
        if (reply.contains("prompt_eval_count") && reply["prompt_eval_count"].is_number())
            out.prompt_tokens = reply["prompt_eval_count"].get<int>();
        if (reply.contains("eval_count") && reply["eval_count"].is_number())
            out.completion_tokens = reply["eval_count"].get<int>();
        out.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start);
        return out;
    }

    Endpoint endpoint_;
    std::string model_;
    GatewayOptions options_;
    std::counting_semaphore<64> multimodal_slots_;
    std::counting_semaphore<64> text_slots_;
    std::atomic<int> calls_{0};
    std::atomic<int> attempts_{0};
};

} // namespace

std::unique_ptr<ChatGateway> make_http_gateway(const std::string& endpoint_url,
                                               const std::string& model,
                                               GatewayOptions options) {
    if (endpoint_url.empty())
        throw ConfigError("gateway requires a non-empty endpoint url");
    return std::make_unique<HttpChatGateway>(endpoint_url, model, options);
}

} // namespace finrag
