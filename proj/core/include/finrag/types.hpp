#pragma once
// Core domain types: modalities, chunk identity, unit-norm embedding
// vectors. Everything here is an immutable value after construction and
// safe to share across threads.

#include <compare>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "finrag/errors.hpp"

namespace finrag {

// The three retrievable chunk kinds.
enum class Modality : std::uint8_t { Text = 0, Table = 1, Image = 2 };

std::string_view modality_name(Modality m);
Modality parse_modality(std::string_view name);

// Stable identifier for one retrievable chunk: (document, modality,
// sequence number). Unique within a knowledge base and stable across
// save/load. Renders as "doc/text/42"; '/' is forbidden in doc ids.
struct ChunkId {
    std::string doc;
    Modality modality = Modality::Text;
    std::uint32_t seq = 0;

    auto operator<=>(const ChunkId&) const = default;

    std::string str() const;
    static ChunkId parse(std::string_view s);
};

struct ChunkIdHash {
    std::size_t operator()(const ChunkId& id) const noexcept {
        std::size_t h = std::hash<std::string>{}(id.doc);
        h ^= std::hash<std::uint32_t>{}(
                 (static_cast<std::uint32_t>(id.modality) << 24) ^ id.seq) +
             0x9e3779b9 + (h << 6) + (h >> 2);
        return h;
    }
};

// Fixed-dimension float vector with Euclidean norm 1 (within 1e-6).
// Normalization happens once, at construction; all similarity math on
// stored vectors is then a plain dot product.
class EmbeddingVector {
public:
    EmbeddingVector() = default;

    // L2-normalizes `values`. Rejects empty and zero vectors.
    static EmbeddingVector normalized(std::vector<float> values);

    // For vectors read back from index files: renormalizes to restore
    // the invariant after float round-trips.
    static EmbeddingVector from_stored(std::vector<float> values) {
        return normalized(std::move(values));
    }

    std::size_t dim() const { return values_.size(); }
    bool empty() const { return values_.empty(); }
    const std::vector<float>& values() const { return values_; }
    std::span<const float> span() const { return values_; }

    // Dot product; equals cosine similarity since both sides are unit
    // norm. Throws ConfigError on dimension mismatch.
    float dot(const EmbeddingVector& other) const;

private:
    explicit EmbeddingVector(std::vector<float> v) : values_(std::move(v)) {}
    std::vector<float> values_;
};

} // namespace finrag
