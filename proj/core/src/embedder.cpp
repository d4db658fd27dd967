#include "finrag/embedder.hpp"

#include <cctype>
#include <cstdint>

#include "finrag/errors.hpp"

namespace finrag {
namespace {

// FNV-1a with an explicit seed so vectors are identical across
// processes and platforms (std::hash is not portable).
std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t kBucketSeed = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kSignSeed = 0x9e3779b97f4a7c15ULL;

bool is_blank(std::string_view s) {
    for (unsigned char c : s)
        if (!std::isspace(c))
            return false;
    return true;
}

} // namespace

std::vector<EmbeddingVector> Embedder::embed_batch(std::span<const std::string> texts) {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts)
        out.push_back(embed_one(t));
    return out;
}

TokenHashEmbedder::TokenHashEmbedder(int dimension) : dimension_(dimension) {
    if (dimension < 1)
        throw ConfigError("embedder dimension must be >= 1");
}

EmbeddingVector TokenHashEmbedder::embed_one(std::string_view text) {
    if (is_blank(text))
        throw InputError("cannot embed empty text");

    std::vector<float> acc(static_cast<std::size_t>(dimension_), 0.0f);
    std::string token;
    bool any_token = false;

    auto flush = [&] {
        if (token.empty())
            return;
        any_token = true;
        const std::uint64_t bucket = fnv1a64(token, kBucketSeed);
        const std::uint64_t sign = fnv1a64(token, kSignSeed);
        acc[bucket % static_cast<std::uint64_t>(dimension_)] +=
            (sign & 1u) ? 1.0f : -1.0f;
        token.clear();
    };

    for (unsigned char c : text) {
        if (std::isalnum(c))
            token += static_cast<char>(std::tolower(c));
        else
            flush();
    }
    flush();

    // Text made solely of symbols still has to embed somewhere: fall
    // back to hashing the raw text as a single token.
    bool all_zero = true;
    for (float v : acc)
        if (v != 0.0f) {
            all_zero = false;
            break;
        }
    if (!any_token || all_zero) {
        const std::uint64_t bucket = fnv1a64(text, kBucketSeed);
        const std::uint64_t sign = fnv1a64(text, kSignSeed);
        acc[bucket % static_cast<std::uint64_t>(dimension_)] =
            (sign & 1u) ? 1.0f : -1.0f;
    }

    return EmbeddingVector::normalized(std::move(acc));
}

} // namespace finrag
