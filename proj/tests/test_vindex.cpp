#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <random>

#include "finrag/vindex.hpp"

#include "test_support.hpp"

using namespace finrag;
using testsupport::tid;

namespace {

std::vector<testsupport::OracleEntry> seed_entries(std::mt19937_64& rng, int count,
                                                   int dim) {
    std::vector<testsupport::OracleEntry> entries;
    entries.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        entries.push_back({tid("doc", Modality::Text, static_cast<std::uint32_t>(i)),
                           testsupport::random_unit(rng, dim)});
    return entries;
}

void fill(VectorIndex& index, const std::vector<testsupport::OracleEntry>& entries) {
    for (const auto& e : entries)
        index.insert({e.id, e.vector, {}});
}

bool same_hits(const std::vector<SearchHit>& a, const std::vector<SearchHit>& b,
               float tol = 1e-5f) {
    if (a.size() != b.size())
        return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].id != b[i].id || std::abs(a[i].similarity - b[i].similarity) > tol)
            return false;
    return true;
}

} // namespace

TEST_CASE("insert then self-search returns similarity 1") {
    for (auto make : {make_flat_index, +[](int d) { return make_hnsw_index(d, {}); }}) {
        auto index = make(8);
        auto v = testsupport::axis_vector(8, 3);
        index->insert({tid("d", Modality::Text, 0), v, "payload"});
        const auto hits = index->search_topk(v, 1);
        REQUIRE(hits.size() == 1);
        CHECK(hits[0].similarity == doctest::Approx(1.0));
        CHECK(hits[0].id.seq == 0);
    }
}

TEST_CASE("duplicate ids and dimension mismatches are rejected") {
    auto index = make_flat_index(4);
    index->insert({tid("d", Modality::Text, 0), testsupport::axis_vector(4, 0), {}});
    CHECK_THROWS_AS(
        index->insert({tid("d", Modality::Text, 0), testsupport::axis_vector(4, 1), {}}),
        DataError);
    CHECK_THROWS_AS(
        index->insert({tid("d", Modality::Text, 1), testsupport::axis_vector(5, 1), {}}),
        ConfigError);
    CHECK_THROWS_AS(index->search_topk(testsupport::axis_vector(3, 0), 1), ConfigError);
}

TEST_CASE("empty index searches return empty lists") {
    for (auto make : {make_flat_index, +[](int d) { return make_hnsw_index(d, {}); }}) {
        auto index = make(8);
        CHECK(index->search_topk(testsupport::axis_vector(8, 0), 5).empty());
        CHECK(index->search_threshold(testsupport::axis_vector(8, 0), 0.5, 10).empty());
    }
}

TEST_CASE("orthogonal vectors: exact top-1 is the query itself") {
    auto index = make_flat_index(4);
    for (int i = 0; i < 3; ++i)
        index->insert({tid("d", Modality::Text, static_cast<std::uint32_t>(i)),
                       testsupport::axis_vector(4, i), {}});
    const auto hits = index->search_topk(testsupport::axis_vector(4, 2), 1);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].id.seq == 2);
    CHECK(hits[0].similarity == doctest::Approx(1.0));
}

TEST_CASE("flat index equals the independent exhaustive-scan oracle") {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<int> count_dist(0, 120);
        const int count = count_dist(rng);
        const auto entries = seed_entries(rng, count, 16);
        auto index = make_flat_index(16);
        fill(*index, entries);

        const auto query = testsupport::random_unit(rng, 16);
        for (double theta : {-1.0, 0.0, 0.1, 0.5, 0.95}) {
            const auto got = index->search_threshold(query, theta, 64);
            const auto want = testsupport::oracle_threshold(entries, query, theta, 64);
            CHECK(same_hits(got, want));
        }
        const auto got = index->search_topk(query, 10);
        const auto want = testsupport::oracle_topk(entries, query, 10);
        CHECK(same_hits(got, want));
    }
}

TEST_CASE("threshold -1 on the flat index equals top-k with k = cap") {
    std::mt19937_64 rng(7);
    const auto entries = seed_entries(rng, 50, 8);
    auto index = make_flat_index(8);
    fill(*index, entries);
    const auto query = testsupport::random_unit(rng, 8);
    CHECK(same_hits(index->search_threshold(query, -1.0, 12),
                    index->search_topk(query, 12)));
}

TEST_CASE("an extreme threshold returns nothing on random data") {
    std::mt19937_64 rng(9);
    const auto entries = seed_entries(rng, 500, 32);
    auto index = make_flat_index(32);
    fill(*index, entries);
    const auto query = testsupport::random_unit(rng, 32);
    const auto hits = index->search_threshold(query, 0.999999, 64);
    CHECK(hits == testsupport::oracle_threshold(entries, query, 0.999999, 64));
    CHECK(hits.empty());
}

TEST_CASE("planted qualifying set is returned exactly") {
    std::mt19937_64 rng(11);
    const int dim = 32;
    const auto query = testsupport::random_unit(rng, dim);

    std::vector<testsupport::OracleEntry> entries;
    // 7 planted entries above 0.9 similarity to the query, at distinct
    // similarities so the expected order is unambiguous.
    for (int i = 0; i < 7; ++i)
        entries.push_back({tid("gold", Modality::Text, static_cast<std::uint32_t>(i)),
                           testsupport::at_similarity(query, 0.90 + 0.01 * i, rng)});
    // 1000 noise entries; random 32-d vectors essentially never reach 0.70.
    for (int i = 0; i < 1000; ++i)
        entries.push_back({tid("noise", Modality::Text, static_cast<std::uint32_t>(i)),
                           testsupport::random_unit(rng, dim)});

    auto index = make_flat_index(dim);
    fill(*index, entries);
    const auto hits = index->search_threshold(query, 0.70, 64);
    REQUIRE(hits.size() == 7);
    for (const auto& h : hits) {
        CHECK(h.id.doc == "gold");
        CHECK(h.similarity >= 0.70f);
    }
    CHECK(same_hits(hits, testsupport::oracle_threshold(entries, query, 0.70, 64)));
}

TEST_CASE("results are sorted by similarity desc then id asc") {
    auto index = make_flat_index(4);
    const auto v = testsupport::axis_vector(4, 0);
    // Same vector under different ids: ties must sort by id.
    for (std::uint32_t seq : {7u, 3u, 5u})
        index->insert({tid("d", Modality::Text, seq), v, {}});
    const auto hits = index->search_topk(v, 3);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0].id.seq == 3);
    CHECK(hits[1].id.seq == 5);
    CHECK(hits[2].id.seq == 7);
}

TEST_CASE("hnsw with a fixed seed is deterministic") {
    std::mt19937_64 rng(77);
    const auto entries = seed_entries(rng, 300, 16);

    HnswParams params;
    params.rng_seed = 42;
    auto a = make_hnsw_index(16, params);
    auto b = make_hnsw_index(16, params);
    fill(*a, entries);
    fill(*b, entries);

    for (int i = 0; i < 20; ++i) {
        const auto query = testsupport::random_unit(rng, 16);
        CHECK(same_hits(a->search_topk(query, 10), b->search_topk(query, 10), 0.0f));
    }
}

TEST_CASE("hnsw recall@10 vs the flat oracle at 10k scale") {
    std::mt19937_64 rng(123);
    const int dim = 32;
    const auto entries = seed_entries(rng, 10000, dim);

    auto hnsw = make_hnsw_index(dim, {});
    fill(*hnsw, entries);

    int found = 0, total = 0;
    for (int qi = 0; qi < 200; ++qi) {
        const auto query = testsupport::random_unit(rng, dim);
        const auto exact = testsupport::oracle_topk(entries, query, 10);
        const auto approx = hnsw->search_topk(query, 10);
        for (const auto& e : exact) {
            ++total;
            for (const auto& a : approx)
                if (a.id == e.id) {
                    ++found;
                    break;
                }
        }
    }
    const double recall = static_cast<double>(found) / static_cast<double>(total);
    CHECK(recall >= 0.95);
}

TEST_CASE("hnsw thresholded search is bounded by the flat oracle") {
    std::mt19937_64 rng(321);
    const int dim = 16;
    const auto entries = seed_entries(rng, 2000, dim);
    auto hnsw = make_hnsw_index(dim, {});
    fill(*hnsw, entries);

    for (int qi = 0; qi < 20; ++qi) {
        const auto query = testsupport::random_unit(rng, dim);
        const auto got = hnsw->search_threshold(query, 0.4, 64);
        // The full qualifying set, uncapped: over-fetch + filter can only
        // miss items, never invent them.
        const auto want =
            testsupport::oracle_threshold(entries, query, 0.4, entries.size());
        for (const auto& h : got) {
            CHECK(h.similarity >= 0.4f);
            bool in_oracle = false;
            for (const auto& w : want)
                if (w.id == h.id)
                    in_oracle = true;
            CHECK(in_oracle);
        }
        CHECK(got.size() <= 64);
    }
}

TEST_CASE("save and load round-trip both index kinds") {
    testsupport::TempDir dir("frix");
    std::mt19937_64 rng(55);
    const auto entries = seed_entries(rng, 1000, 12);

    for (bool hnsw : {false, true}) {
        auto index = hnsw ? make_hnsw_index(12, {}) : make_flat_index(12);
        fill(*index, entries);
        // Payload survives the round trip.
        index->insert({tid("p", Modality::Table, 1), testsupport::random_unit(rng, 12),
                       "summary-ref"});

        const auto path = dir / (hnsw ? "h.frix" : "f.frix");
        index->save(path);
        auto loaded = load_index(path);

        CHECK(loaded->kind() == index->kind());
        CHECK(loaded->size() == index->size());
        CHECK(loaded->find(tid("p", Modality::Table, 1))->payload == "summary-ref");

        for (int qi = 0; qi < 100; ++qi) {
            const auto query = testsupport::random_unit(rng, 12);
            CHECK(same_hits(index->search_topk(query, 10), loaded->search_topk(query, 10),
                            1e-6f));
        }
    }
}

TEST_CASE("save and load an empty index") {
    testsupport::TempDir dir("frix-empty");
    for (bool hnsw : {false, true}) {
        auto index = hnsw ? make_hnsw_index(8, {}) : make_flat_index(8);
        const auto path = dir / (hnsw ? "eh.frix" : "ef.frix");
        index->save(path);
        auto loaded = load_index(path);
        CHECK(loaded->size() == 0);
        CHECK(loaded->search_topk(testsupport::axis_vector(8, 0), 3).empty());
    }
}

TEST_CASE("corrupt magic header fails to load") {
    testsupport::TempDir dir("frix-bad");
    auto index = make_flat_index(4);
    index->insert({tid("d", Modality::Text, 0), testsupport::axis_vector(4, 0), {}});
    const auto path = dir / "x.frix";
    index->save(path);

    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("JUNK", 4);
    f.close();
    CHECK_THROWS_WITH_AS(static_cast<void>(load_index(path)),
                         doctest::Contains("bad magic"), DataError);
}

TEST_CASE("truncated index file names the failing offset") {
    testsupport::TempDir dir("frix-trunc");
    auto index = make_hnsw_index(8, {});
    std::mt19937_64 rng(3);
    fill(*index, seed_entries(rng, 20, 8));
    const auto path = dir / "t.frix";
    index->save(path);

    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full / 2);
    try {
        auto loaded = load_index(path);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
}

TEST_CASE("version mismatch is reported explicitly") {
    testsupport::TempDir dir("frix-ver");
    auto index = make_flat_index(4);
    const auto path = dir / "v.frix";
    index->save(path);

    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint16_t bad = 99;
    f.write(reinterpret_cast<const char*>(&bad), sizeof(bad));
    f.close();
    CHECK_THROWS_WITH_AS(static_cast<void>(load_index(path)),
                         doctest::Contains("version"), DataError);
}
