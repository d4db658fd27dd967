#include <algorithm>
#include <mutex>
#include <semaphore>
#include <unordered_map>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "finrag/embedder.hpp"
#include "finrag/errors.hpp"

namespace finrag {
namespace {

using nlohmann::json;

bool is_blank(std::string_view s) {
    return s.find_first_not_of(" \t\r\n") == std::string_view::npos;
}

// Splits "http://host:port/base" into client target and path prefix.
struct Endpoint {
    std::string host_port; // scheme://host:port
    std::string path;      // leading path, defaults to /embed
};

Endpoint parse_endpoint(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("embed endpoint must include a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    Endpoint ep;
    if (path_start == std::string::npos) {
        ep.host_port = url;
        ep.path = "/embed";
    } else {
        ep.host_port = url.substr(0, path_start);
        ep.path = url.substr(path_start);
    }
    return ep;
}

class RemoteEmbedder final : public Embedder {
public:
    explicit RemoteEmbedder(EmbedderSpec spec)
        : spec_(std::move(spec)), endpoint_(parse_endpoint(spec_.endpoint_url)),
          in_flight_(std::clamp(spec_.max_in_flight, 1, 64)) {
        if (spec_.dimension < 1)
            throw ConfigError("embedder dimension must be >= 1");
        if (spec_.max_batch < 1)
            throw ConfigError("embedder max_batch must be >= 1");
    }

    int dimension() const override { return spec_.dimension; }

    EmbeddingVector embed_one(std::string_view text) override {
        if (is_blank(text))
            throw InputError("cannot embed empty text");
        std::vector<std::string> one{std::string(text)};
        return embed_batch(one).front();
    }

    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override {
        std::vector<EmbeddingVector> out(texts.size());
        std::vector<std::size_t> misses;
        std::vector<std::string> pending;

        {
            std::lock_guard lock(memo_mutex_);
            for (std::size_t i = 0; i < texts.size(); ++i) {
                if (is_blank(texts[i]))
                    throw InputError("cannot embed empty text (batch element " +
                                     std::to_string(i) + ")");
                auto it = memo_.find(texts[i]);
                if (it != memo_.end())
                    out[i] = it->second;
                else {
                    misses.push_back(i);
                    pending.push_back(texts[i]);
                }
            }
        }

        // Re-chunk cache misses into <= max_batch slices; any slice
        // failure fails the whole batch, never leaving silent gaps.
        for (std::size_t off = 0; off < pending.size();
             off += static_cast<std::size_t>(spec_.max_batch)) {
            std::size_t n = std::min(pending.size() - off,
                                     static_cast<std::size_t>(spec_.max_batch));
            auto vectors = call_remote({pending.data() + off, n});
            std::lock_guard lock(memo_mutex_);
            for (std::size_t j = 0; j < n; ++j) {
                out[misses[off + j]] = vectors[j];
                memo_.emplace(pending[off + j], vectors[j]);
            }
        }
        return out;
    }

private:
    std::vector<EmbeddingVector> call_remote(std::span<const std::string> texts) {
        json body;
        body["texts"] = json::array();
        for (const auto& t : texts)
            body["texts"].push_back(t);
        const std::string payload = body.dump();

        std::string last_error;
        for (int attempt = 0; attempt <= spec_.retry_limit; ++attempt) {
            in_flight_.acquire();
            httplib::Client client(endpoint_.host_port);
            auto secs = std::chrono::duration_cast<std::chrono::seconds>(
                spec_.request_timeout);
            client.set_read_timeout(std::max<long>(1, secs.count()), 0);
            client.set_connection_timeout(std::max<long>(1, secs.count()), 0);
            auto res = client.Post(endpoint_.path, payload, "application/json");
            in_flight_.release();

            if (!res) {
                last_error = "connection failed: " + httplib::to_string(res.error());
            } else if (res->status >= 500) {
                last_error = "server error " + std::to_string(res->status);
            } else if (res->status != 200) {
                throw TransportError("embedding server returned status " +
                                     std::to_string(res->status));
            } else {
                return parse_vectors(res->body, texts.size());
            }
        }
        throw TransportError("embedding request failed after " +
                             std::to_string(spec_.retry_limit + 1) +
                             " attempts: " + last_error);
    }

    std::vector<EmbeddingVector> parse_vectors(const std::string& body,
                                               std::size_t expected) {
        json reply = json::parse(body, nullptr, false);
        if (reply.is_discarded() || !reply.contains("vectors") ||
            !reply["vectors"].is_array())
            throw TransportError("embedding server reply is not {\"vectors\": [...]}");
        const auto& vecs = reply["vectors"];
        if (vecs.size() != expected)
            throw TransportError("embedding server returned " +
                                 std::to_string(vecs.size()) + " vectors for " +
                                 std::to_string(expected) + " texts");
        std::vector<EmbeddingVector> out;
        out.reserve(expected);
        for (const auto& v : vecs) {
            if (!v.is_array() || static_cast<int>(v.size()) != spec_.dimension)
                throw TransportError("embedding server returned a vector of dimension " +
                                     std::to_string(v.size()) + ", expected " +
                                     std::to_string(spec_.dimension));
            std::vector<float> values;
            values.reserve(v.size());
            for (const auto& x : v)
                values.push_back(x.get<float>());
            // Local renormalization enforces the norm invariant at one
            // boundary regardless of server behavior.
            out.push_back(EmbeddingVector::normalized(std::move(values)));
        }
        return out;
    }

    EmbedderSpec spec_;
    Endpoint endpoint_;
    std::counting_semaphore<64> in_flight_;
    std::mutex memo_mutex_;
    std::unordered_map<std::string, EmbeddingVector> memo_;
};

} // namespace

std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec) {
    switch (spec.kind) {
    case EmbedderSpec::Kind::DeterministicTest:
        return std::make_unique<TokenHashEmbedder>(spec.dimension);
    case EmbedderSpec::Kind::Remote:
        if (spec.endpoint_url.empty())
            throw ConfigError("remote embedder requires a non-empty endpoint_url");
        return std::make_unique<RemoteEmbedder>(spec);
    }
    throw ConfigError("unknown embedder kind");
}

} // namespace finrag
