#pragma once
// Similarity primitives. Stored vectors are pre-normalized, so cosine
// similarity reduces to a dot product; breakpoint distance is 1 - cos.

#include "finrag/types.hpp"

namespace finrag {

// Cosine similarity of two unit vectors, in [-1, 1]. Symmetric.
// Throws ConfigError on dimension mismatch.
inline float cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    return a.dot(b);
}

// Adjacent-sentence breakpoint distance: d = 1 - cos(a, b).
inline float cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
    return 1.0f - cosine_similarity(a, b);
}

} // namespace finrag
