#pragma once
// Per-modality vector index. Two implementations behind one contract:
//   - FlatIndex: exact brute-force scan, the correctness oracle.
//   - HnswIndex: hierarchical navigable small-world graph for sub-second
//     k-NN at |C| > 10^5.
// Both persist to a versioned binary .frix file; HNSW serializes its
// graph, so a loaded index answers searches identically to the saved one.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "finrag/types.hpp"

namespace finrag {

struct IndexEntry {
    ChunkId id;
    EmbeddingVector vector;
    std::string payload; // opaque record reference, resolved via the store
};

struct HnswParams {
    int M = 16;               // max neighbors per node per layer (2M at layer 0)
    int ef_construction = 200;
    int ef_search = 64;
    std::uint64_t rng_seed = 0x5eedf00dULL; // level draws; fixed seed => same
                                            // insertion order gives the same graph
};

struct SearchHit {
    ChunkId id;
    float similarity = 0.0f;

    bool operator==(const SearchHit&) const = default;
};

// Result lists are always sorted by similarity descending, ties by id
// ascending.
bool hit_order(const SearchHit& a, const SearchHit& b);

enum class IndexKind : std::uint8_t { Flat = 0, Hnsw = 1 };

class VectorIndex {
public:
    virtual ~VectorIndex() = default;

    virtual IndexKind kind() const = 0;
    virtual int dimension() const = 0;
    virtual std::size_t size() const = 0;

    // Entry is immediately visible to subsequent searches. Throws
    // DataError on duplicate id, ConfigError on dimension mismatch.
    virtual void insert(IndexEntry entry) = 0;

    // k nearest by cosine similarity. Flat is exact; HNSW approximate.
    // Empty index returns an empty list.
    virtual std::vector<SearchHit> search_topk(const EmbeddingVector& query,
                                               int k) const = 0;

    // All hits with similarity >= theta, best-first, at most `cap`.
    // Flat returns exactly the qualifying set (up to cap); HNSW
    // over-fetches ef_search candidates then filters, so qualifying
    // items beyond the candidate pool can be missed.
    virtual std::vector<SearchHit> search_threshold(const EmbeddingVector& query,
                                                    double theta, int cap) const = 0;

    virtual const IndexEntry* find(const ChunkId& id) const = 0;

    // Ids in insertion order.
    virtual std::vector<ChunkId> ids() const = 0;

    virtual void save(const std::filesystem::path& path) const = 0;
};

std::unique_ptr<VectorIndex> make_flat_index(int dimension);
std::unique_ptr<VectorIndex> make_hnsw_index(int dimension, HnswParams params = {});

// Reads a .frix file written by save(). Throws DataError naming the file
// offset on bad magic, version mismatch, or truncation.
std::unique_ptr<VectorIndex> load_index(const std::filesystem::path& path);

} // namespace finrag
