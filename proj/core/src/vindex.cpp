#include "finrag/vindex.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>
#include <unordered_map>

#include "index_io.hpp"

namespace finrag {

bool hit_order(const SearchHit& a, const SearchHit& b) {
    if (a.similarity != b.similarity)
        return a.similarity > b.similarity;
    return a.id < b.id;
}

namespace {

using detail::BinaryReader;
using detail::BinaryWriter;

float dot(std::span<const float> a, std::span<const float> b) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += a[i] * b[i];
    return acc;
}

// Shared entry storage: contiguous vectors for cache-friendly scans plus
// an id map for duplicate rejection and payload lookup.
class EntryStore {
public:
    explicit EntryStore(int dim) : dim_(dim) {
        if (dim < 1)
            throw ConfigError("index dimension must be >= 1");
    }

    std::uint32_t add(IndexEntry entry) {
        if (static_cast<int>(entry.vector.dim()) != dim_)
            throw ConfigError("index expects dimension " + std::to_string(dim_) +
                              ", got " + std::to_string(entry.vector.dim()));
        if (by_id_.count(entry.id))
            throw DataError("duplicate id inserted: " + entry.id.str());
        const auto internal = static_cast<std::uint32_t>(entries_.size());
        by_id_.emplace(entry.id, internal);
        entries_.push_back(std::move(entry));
        return internal;
    }

    int dim() const { return dim_; }
    std::size_t size() const { return entries_.size(); }
    const IndexEntry& at(std::uint32_t i) const { return entries_[i]; }
    std::span<const float> vec(std::uint32_t i) const {
        return entries_[i].vector.span();
    }

    const IndexEntry* find(const ChunkId& id) const {
        auto it = by_id_.find(id);
        return it == by_id_.end() ? nullptr : &entries_[it->second];
    }

    std::vector<ChunkId> ids() const {
        std::vector<ChunkId> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_)
            out.push_back(e.id);
        return out;
    }

    void write(BinaryWriter& w) const {
        for (const auto& e : entries_) {
            w.put_string(e.id.doc);
            w.put<std::uint8_t>(static_cast<std::uint8_t>(e.id.modality));
            w.put<std::uint32_t>(e.id.seq);
            if (e.payload.size() > UINT32_MAX)
                throw DataError("payload too large to serialize");
            w.put<std::uint32_t>(static_cast<std::uint32_t>(e.payload.size()));
            w.put_bytes(e.payload.data(), e.payload.size());
            w.put_bytes(e.vector.values().data(), e.vector.dim() * sizeof(float));
        }
    }

    static IndexEntry read_entry(BinaryReader& r, int dim) {
        IndexEntry e;
        e.id.doc = r.get_string();
        const auto modality = r.get<std::uint8_t>();
        if (modality > 2)
            throw DataError(r.path() + ": invalid modality byte at offset " +
                            std::to_string(r.offset() - 1));
        e.id.modality = static_cast<Modality>(modality);
        e.id.seq = r.get<std::uint32_t>();
        const auto payload_len = r.get<std::uint32_t>();
        e.payload.resize(payload_len);
        for (std::uint32_t i = 0; i < payload_len; ++i)
            e.payload[i] = static_cast<char>(r.get<std::uint8_t>());
        std::vector<float> values(static_cast<std::size_t>(dim));
        for (int i = 0; i < dim; ++i)
            values[static_cast<std::size_t>(i)] = r.get<float>();
        e.vector = EmbeddingVector::from_stored(std::move(values));
        return e;
    }

private:
    int dim_;
    std::vector<IndexEntry> entries_;
    std::unordered_map<ChunkId, std::uint32_t, ChunkIdHash> by_id_;
};

void write_header(BinaryWriter& w, IndexKind kind, int dim, std::size_t count) {
    w.put_bytes(detail::kIndexMagic, sizeof(detail::kIndexMagic));
    w.put<std::uint16_t>(detail::kIndexVersion);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(kind));
    w.put<std::uint8_t>(detail::kMetricCosineDot);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(dim));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(count));
}

struct Header {
    IndexKind kind;
    int dim;
    std::uint64_t count;
};

Header read_header(BinaryReader& r) {
    char magic[4];
    for (auto& c : magic)
        c = static_cast<char>(r.get<std::uint8_t>());
    if (std::memcmp(magic, detail::kIndexMagic, 4) != 0)
        throw DataError(r.path() + ": bad magic at offset 0, not a FRIX index file");
    const auto version = r.get<std::uint16_t>();
    if (version != detail::kIndexVersion)
        throw DataError(r.path() + ": unsupported index format version " +
                        std::to_string(version) + " (expected " +
                        std::to_string(detail::kIndexVersion) + ")");
    const auto kind = r.get<std::uint8_t>();
    if (kind > 1)
        throw DataError(r.path() + ": unknown index kind at offset 6");
    const auto metric = r.get<std::uint8_t>();
    if (metric != detail::kMetricCosineDot)
        throw DataError(r.path() + ": unknown metric id at offset 7");
    const auto dim = r.get<std::uint32_t>();
    const auto count = r.get<std::uint64_t>();
    return {static_cast<IndexKind>(kind), static_cast<int>(dim), count};
}

std::vector<SearchHit> finish_hits(std::vector<SearchHit> hits, std::size_t cap) {
    std::sort(hits.begin(), hits.end(), hit_order);
    if (hits.size() > cap)
        hits.resize(cap);
    return hits;
}

// ---------------------------------------------------------------------
// FlatIndex: exact scan. The oracle every approximate result is tested
// against.
// ---------------------------------------------------------------------

class FlatIndex final : public VectorIndex {
public:
    explicit FlatIndex(int dim) : store_(dim) {}

    IndexKind kind() const override { return IndexKind::Flat; }
    int dimension() const override { return store_.dim(); }
    std::size_t size() const override { return store_.size(); }

    void insert(IndexEntry entry) override { store_.add(std::move(entry)); }

    std::vector<SearchHit> search_topk(const EmbeddingVector& query, int k) const override {
        check_query(query);
        if (k < 1)
            throw InputError("search_topk requires k >= 1");
        std::vector<SearchHit> hits = scan(query);
        return finish_hits(std::move(hits), static_cast<std::size_t>(k));
    }

    std::vector<SearchHit> search_threshold(const EmbeddingVector& query, double theta,
                                            int cap) const override {
        check_query(query);
        if (cap < 1)
            throw InputError("search_threshold requires cap >= 1");
        std::vector<SearchHit> hits;
        for (std::uint32_t i = 0; i < store_.size(); ++i) {
            const float sim = dot(query.span(), store_.vec(i));
            if (static_cast<double>(sim) >= theta)
                hits.push_back({store_.at(i).id, sim});
        }
        return finish_hits(std::move(hits), static_cast<std::size_t>(cap));
    }

    const IndexEntry* find(const ChunkId& id) const override { return store_.find(id); }
    std::vector<ChunkId> ids() const override { return store_.ids(); }

    void save(const std::filesystem::path& path) const override {
        BinaryWriter w(path);
        write_header(w, IndexKind::Flat, store_.dim(), store_.size());
        store_.write(w);
        w.finish();
    }

    static std::unique_ptr<FlatIndex> load(BinaryReader& r, const Header& h) {
        auto idx = std::make_unique<FlatIndex>(h.dim);
        for (std::uint64_t i = 0; i < h.count; ++i)
            idx->store_.add(EntryStore::read_entry(r, h.dim));
        return idx;
    }

private:
    void check_query(const EmbeddingVector& q) const {
        if (static_cast<int>(q.dim()) != store_.dim())
            throw ConfigError("query dimension " + std::to_string(q.dim()) +
                              " does not match index dimension " +
                              std::to_string(store_.dim()));
    }

    std::vector<SearchHit> scan(const EmbeddingVector& query) const {
        std::vector<SearchHit> hits;
        hits.reserve(store_.size());
        for (std::uint32_t i = 0; i < store_.size(); ++i)
            hits.push_back({store_.at(i).id, dot(query.span(), store_.vec(i))});
        return hits;
    }

    EntryStore store_;
};

// ---------------------------------------------------------------------
// HnswIndex: layered proximity graph (Malkov & Yashunin). Distances are
// 1 - dot on pre-normalized vectors. Level draws come from a seeded RNG,
// so a fixed insertion order always produces the same graph.
// ---------------------------------------------------------------------

class HnswIndex final : public VectorIndex {
public:
    HnswIndex(int dim, HnswParams params)
        : store_(dim), params_(params), rng_(params.rng_seed),
          level_mult_(1.0 / std::log(static_cast<double>(std::max(2, params.M)))) {
        if (params_.M < 2)
            throw ConfigError("hnsw M must be >= 2");
        if (params_.ef_construction < 1 || params_.ef_search < 1)
            throw ConfigError("hnsw ef parameters must be >= 1");
    }

    IndexKind kind() const override { return IndexKind::Hnsw; }
    int dimension() const override { return store_.dim(); }
    std::size_t size() const override { return store_.size(); }

    void insert(IndexEntry entry) override {
        const std::uint32_t node = store_.add(std::move(entry));
        const int level = draw_level();
        links_.emplace_back(static_cast<std::size_t>(level) + 1);

        if (node == 0) {
            entry_point_ = 0;
            max_level_ = level;
            return;
        }

        const std::span<const float> q = store_.vec(node);
        std::uint32_t current = entry_point_;

        for (int lc = max_level_; lc > level; --lc)
            current = greedy_descend(q, current, lc);

        for (int lc = std::min(level, max_level_); lc >= 0; --lc) {
            auto candidates = search_layer(q, current, params_.ef_construction, lc);
            connect(node, candidates, lc);
            if (!candidates.empty())
                current = candidates.front().second;
        }

        if (level > max_level_) {
            max_level_ = level;
            entry_point_ = node;
        }
    }

    std::vector<SearchHit> search_topk(const EmbeddingVector& query, int k) const override {
        check_query(query);
        if (k < 1)
            throw InputError("search_topk requires k >= 1");
        const int ef = std::max(params_.ef_search, k);
        auto near = descend_and_search(query.span(), ef);
        std::vector<SearchHit> hits;
        hits.reserve(near.size());
        for (const auto& [dist, idx] : near)
            hits.push_back({store_.at(idx).id, 1.0f - dist});
        return finish_hits(std::move(hits), static_cast<std::size_t>(k));
    }

    std::vector<SearchHit> search_threshold(const EmbeddingVector& query, double theta,
                                            int cap) const override {
        check_query(query);
        if (cap < 1)
            throw InputError("search_threshold requires cap >= 1");
        const int ef = std::max(params_.ef_search, cap);
        auto near = descend_and_search(query.span(), ef);
        std::vector<SearchHit> hits;
        for (const auto& [dist, idx] : near) {
            const float sim = 1.0f - dist;
            if (static_cast<double>(sim) >= theta)
                hits.push_back({store_.at(idx).id, sim});
        }
        return finish_hits(std::move(hits), static_cast<std::size_t>(cap));
    }

    const IndexEntry* find(const ChunkId& id) const override { return store_.find(id); }
    std::vector<ChunkId> ids() const override { return store_.ids(); }

    void save(const std::filesystem::path& path) const override {
        BinaryWriter w(path);
        write_header(w, IndexKind::Hnsw, store_.dim(), store_.size());
        store_.write(w);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(params_.M));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(params_.ef_construction));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(params_.ef_search));
        w.put<std::uint64_t>(params_.rng_seed);
        w.put<std::int64_t>(store_.size() == 0 ? -1 : static_cast<std::int64_t>(entry_point_));
        w.put<std::int32_t>(max_level_);
        for (const auto& node_links : links_) {
            w.put<std::uint16_t>(static_cast<std::uint16_t>(node_links.size() - 1));
            for (const auto& level_links : node_links) {
                w.put<std::uint32_t>(static_cast<std::uint32_t>(level_links.size()));
                for (std::uint32_t nb : level_links)
                    w.put<std::uint32_t>(nb);
            }
        }
        w.finish();
    }

    static std::unique_ptr<HnswIndex> load(BinaryReader& r, const Header& h) {
        // Entries first, then graph shape; no rebuild happens here.
        std::vector<IndexEntry> entries;
        entries.reserve(h.count);
        for (std::uint64_t i = 0; i < h.count; ++i)
            entries.push_back(EntryStore::read_entry(r, h.dim));

        HnswParams params;
        params.M = static_cast<int>(r.get<std::uint32_t>());
        params.ef_construction = static_cast<int>(r.get<std::uint32_t>());
        params.ef_search = static_cast<int>(r.get<std::uint32_t>());
        params.rng_seed = r.get<std::uint64_t>();

        auto idx = std::make_unique<HnswIndex>(h.dim, params);
        for (auto& e : entries)
            idx->store_.add(std::move(e));

        const auto entry_point = r.get<std::int64_t>();
        idx->max_level_ = r.get<std::int32_t>();
        if (entry_point >= 0) {
            if (static_cast<std::uint64_t>(entry_point) >= h.count)
                throw DataError(r.path() + ": entry point out of range at offset " +
                                std::to_string(r.offset()));
            idx->entry_point_ = static_cast<std::uint32_t>(entry_point);
        }

        idx->links_.resize(h.count);
        for (std::uint64_t i = 0; i < h.count; ++i) {
            const auto top = r.get<std::uint16_t>();
            idx->links_[i].resize(static_cast<std::size_t>(top) + 1);
            for (auto& level_links : idx->links_[i]) {
                const auto degree = r.get<std::uint32_t>();
                level_links.reserve(degree);
                for (std::uint32_t d = 0; d < degree; ++d) {
                    const auto nb = r.get<std::uint32_t>();
                    if (nb >= h.count)
                        throw DataError(r.path() + ": neighbor id out of range at offset " +
                                        std::to_string(r.offset() - 4));
                    level_links.push_back(nb);
                }
            }
        }
        return idx;
    }

private:
    using DistNode = std::pair<float, std::uint32_t>; // (distance, node)

    void check_query(const EmbeddingVector& q) const {
        if (static_cast<int>(q.dim()) != store_.dim())
            throw ConfigError("query dimension " + std::to_string(q.dim()) +
                              " does not match index dimension " +
                              std::to_string(store_.dim()));
    }

    float distance(std::span<const float> q, std::uint32_t node) const {
        return 1.0f - dot(q, store_.vec(node));
    }

    int draw_level() {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        double u = unif(rng_);
        if (u <= 0.0)
            u = 1e-12;
        return static_cast<int>(-std::log(u) * level_mult_);
    }

    int max_degree(int level) const { return level == 0 ? 2 * params_.M : params_.M; }

    const std::vector<std::uint32_t>& neighbors(std::uint32_t node, int level) const {
        return links_[node][static_cast<std::size_t>(level)];
    }

    std::uint32_t greedy_descend(std::span<const float> q, std::uint32_t start,
                                 int level) const {
        std::uint32_t current = start;
        float best = distance(q, current);
        bool improved = true;
        while (improved) {
            improved = false;
            if (static_cast<std::size_t>(level) >= links_[current].size())
                break;
            for (std::uint32_t nb : neighbors(current, level)) {
                const float d = distance(q, nb);
                if (d < best) {
                    best = d;
                    current = nb;
                    improved = true;
                }
            }
        }
        return current;
    }

    // Beam search at one layer; returns up to ef nodes sorted by
    // ascending distance.
    std::vector<DistNode> search_layer(std::span<const float> q, std::uint32_t entry,
                                       int ef, int level) const {
        std::vector<std::uint8_t> visited(store_.size(), 0);

        std::priority_queue<DistNode, std::vector<DistNode>, std::greater<>> candidates;
        std::priority_queue<DistNode> best; // max-heap: worst kept on top

        const float d0 = distance(q, entry);
        candidates.emplace(d0, entry);
        best.emplace(d0, entry);
        visited[entry] = 1;

        while (!candidates.empty()) {
            const auto [dist, node] = candidates.top();
            candidates.pop();
            if (dist > best.top().first && best.size() >= static_cast<std::size_t>(ef))
                break;
            if (static_cast<std::size_t>(level) >= links_[node].size())
                continue;
            for (std::uint32_t nb : neighbors(node, level)) {
                if (visited[nb])
                    continue;
                visited[nb] = 1;
                const float d = distance(q, nb);
                if (best.size() < static_cast<std::size_t>(ef) || d < best.top().first) {
                    candidates.emplace(d, nb);
                    best.emplace(d, nb);
                    if (best.size() > static_cast<std::size_t>(ef))
                        best.pop();
                }
            }
        }

        std::vector<DistNode> out;
        out.reserve(best.size());
        while (!best.empty()) {
            out.push_back(best.top());
            best.pop();
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    // Diversity heuristic (Malkov Alg. 4): keep a candidate only if it
    // is closer to the query than to every already-kept neighbor.
    std::vector<std::uint32_t> select_neighbors(const std::vector<DistNode>& candidates,
                                                int m) const {
        std::vector<DistNode> kept;
        for (const auto& [dist, node] : candidates) {
            if (static_cast<int>(kept.size()) >= m)
                break;
            bool closer_to_query = true;
            for (const auto& [kdist, knode] : kept) {
                const float d = 1.0f - dot(store_.vec(node), store_.vec(knode));
                if (d < dist) {
                    closer_to_query = false;
                    break;
                }
            }
            if (closer_to_query)
                kept.push_back({dist, node});
        }
        std::vector<std::uint32_t> out;
        out.reserve(kept.size());
        for (const auto& [dist, node] : kept)
            out.push_back(node);
        return out;
    }

    void connect(std::uint32_t node, const std::vector<DistNode>& candidates, int level) {
        const int m = params_.M;
        auto selected = select_neighbors(candidates, m);
        auto& own = links_[node][static_cast<std::size_t>(level)];
        own = selected;

        for (std::uint32_t nb : selected) {
            auto& back = links_[nb][static_cast<std::size_t>(level)];
            back.push_back(node);
            const int cap = max_degree(level);
            if (static_cast<int>(back.size()) > cap)
                shrink(nb, level, cap);
        }
    }

    void shrink(std::uint32_t node, int level, int cap) {
        auto& adj = links_[node][static_cast<std::size_t>(level)];
        std::vector<DistNode> scored;
        scored.reserve(adj.size());
        const auto base = store_.vec(node);
        for (std::uint32_t nb : adj)
            scored.push_back({1.0f - dot(base, store_.vec(nb)), nb});
        std::sort(scored.begin(), scored.end());
        adj = select_neighbors(scored, cap);
    }

    std::vector<DistNode> descend_and_search(std::span<const float> q, int ef) const {
        if (store_.size() == 0)
            return {};
        std::uint32_t current = entry_point_;
        for (int lc = max_level_; lc > 0; --lc)
            current = greedy_descend(q, current, lc);
        return search_layer(q, current, ef, 0);
    }

    EntryStore store_;
    HnswParams params_;
    std::mt19937_64 rng_;
    double level_mult_;
    std::uint32_t entry_point_ = 0;
    int max_level_ = 0;
    // links_[node][level] = neighbor list; node participates in levels
    // 0..links_[node].size()-1.
    std::vector<std::vector<std::vector<std::uint32_t>>> links_;
};

} // namespace

std::unique_ptr<VectorIndex> make_flat_index(int dimension) {
    return std::make_unique<FlatIndex>(dimension);
}

std::unique_ptr<VectorIndex> make_hnsw_index(int dimension, HnswParams params) {
    return std::make_unique<HnswIndex>(dimension, params);
}

std::unique_ptr<VectorIndex> load_index(const std::filesystem::path& path) {
    BinaryReader r(path);
    const Header h = read_header(r);
    std::unique_ptr<VectorIndex> idx;
    if (h.kind == IndexKind::Flat)
        idx = FlatIndex::load(r, h);
    else
        idx = HnswIndex::load(r, h);
    if (!r.at_end())
        throw DataError(r.path() + ": trailing bytes at offset " +
                        std::to_string(r.offset()));
    return idx;
}

} // namespace finrag
