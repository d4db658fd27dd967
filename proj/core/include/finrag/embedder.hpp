#pragma once
// Embedding backend contract. Two implementations:
//   - TokenHashEmbedder: deterministic offline embedder for tests and
//     --offline runs. Hashes lowercased tokens into D signed buckets and
//     L2-normalizes, so texts sharing tokens get similar vectors with no
//     model weights involved.
//   - RemoteEmbedder: HTTP client for an embedding server speaking
//     POST {"texts": [...]} -> {"vectors": [[...], ...]}.

#include <chrono>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "finrag/types.hpp"

namespace finrag {

struct EmbedderSpec {
    enum class Kind { Remote, DeterministicTest };

    Kind kind = Kind::DeterministicTest;
    std::string endpoint_url; // Remote only; non-empty required
    int dimension = 384;      // must match EngineConfig.embed_dim
    std::chrono::milliseconds request_timeout{30000};
    int max_batch = 32;    // texts per remote call
    int max_in_flight = 4; // concurrent remote requests
    int retry_limit = 2;
};

class Embedder {
public:
    virtual ~Embedder() = default;

    virtual int dimension() const = 0;

    // Unit-norm D-vector for one non-empty text. Throws InputError on
    // text that is empty after whitespace trim.
    virtual EmbeddingVector embed_one(std::string_view text) = 0;

    // Batch form; output order matches input order and element i equals
    // embed_one(texts[i]). The base implementation loops embed_one;
    // remote backends override to amortize round trips.
    virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts);
};

class TokenHashEmbedder final : public Embedder {
public:
    explicit TokenHashEmbedder(int dimension);

    int dimension() const override { return dimension_; }
    EmbeddingVector embed_one(std::string_view text) override;

private:
    int dimension_;
};

// Builds the backend named by the spec. Remote construction validates
// the endpoint but performs no network I/O.
std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec);

} // namespace finrag
