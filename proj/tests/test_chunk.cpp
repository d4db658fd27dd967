#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "finrag/chunk.hpp"
#include "finrag/similarity.hpp"

#include "test_support.hpp"

using namespace finrag;

namespace {

// Independent percentile oracle: sort, take rank p/100*(n-1), linear
// interpolation. Written separately from the implementation on purpose.
double oracle_percentile(std::vector<double> xs, double p) {
    std::sort(xs.begin(), xs.end());
    const double rank = p / 100.0 * static_cast<double>(xs.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (rank - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

// Embedding sequence with exact consecutive cosine distances, built by
// walking angles in the plane.
std::vector<EmbeddingVector> embeddings_with_distances(const std::vector<double>& d) {
    std::vector<EmbeddingVector> out;
    double theta = 0.0;
    out.push_back(EmbeddingVector::normalized(
        {static_cast<float>(std::cos(theta)), static_cast<float>(std::sin(theta))}));
    for (double dist : d) {
        theta += std::acos(1.0 - dist);
        out.push_back(EmbeddingVector::normalized(
            {static_cast<float>(std::cos(theta)), static_cast<float>(std::sin(theta))}));
    }
    return out;
}

std::vector<SentenceSpan> make_sentences(int n) {
    std::vector<SentenceSpan> out;
    for (int i = 0; i < n; ++i)
        out.push_back({i, "Sentence " + std::to_string(i) + ".", 0, 0});
    return out;
}

TextChunk chunk_of(std::initializer_list<int> ordinals, const std::string& vocab,
                   Embedder& embedder) {
    std::vector<SentencePiece> pieces;
    for (int o : ordinals) {
        std::string text = vocab + " item" + std::to_string(o);
        pieces.push_back({o, text, estimate_tokens(text)});
    }
    auto c = make_chunk(std::move(pieces));
    c.embedding = embedder.embed_one(c.content);
    return c;
}

// Synthetic corpus: k paragraphs of 4 sentences, per-paragraph vocab,
// every interior paragraph covered by two overlapping windows.
std::string redundancy_corpus(int paragraphs) {
    std::string text;
    for (int p = 0; p < paragraphs; ++p) {
        for (int s = 0; s < 4; ++s) {
            text += "Topic" + std::to_string(p) + " alpha" + std::to_string(p) +
                    " beta" + std::to_string(p) + " gamma" + std::to_string(p) +
                    " fact. ";
        }
    }
    return text;
}

std::multiset<std::vector<int>> ordinal_sets(const std::vector<TextChunk>& chunks) {
    std::multiset<std::vector<int>> sets;
    for (const auto& c : chunks)
        sets.insert(c.ordinals());
    return sets;
}

} // namespace

TEST_CASE("segmenter basics") {
    CHECK(segment_sentences("").empty());
    CHECK(segment_sentences("   \n\t ").empty());

    const auto two = segment_sentences("Net sales rose. Costs fell.");
    REQUIRE(two.size() == 2);
    CHECK(two[0].text == "Net sales rose.");
    CHECK(two[1].text == "Costs fell.");
    CHECK(two[0].index == 0);
    CHECK(two[1].index == 1);
}

TEST_CASE("segmenter honors the abbreviation stop-list and decimal guard") {
    const auto spans =
        segment_sentences("Revenue was $1.5 billion vs. prior year. Margins held.");
    REQUIRE(spans.size() == 2);
    CHECK(spans[0].text == "Revenue was $1.5 billion vs. prior year.");

    CHECK(segment_sentences("U.S. Treasury holdings rose. Rates fell.").size() == 2);
    CHECK(segment_sentences("See Fig. 4 for details. It shows growth.").size() == 2);
    CHECK(segment_sentences("Item No. 5 was approved. Voting closed.").size() == 2);
    CHECK(segment_sentences("Apple Inc. Reported strong sales.").size() == 1);
}

TEST_CASE("segmenter spans map back into the source text") {
    const std::string text = "  First point here!  Second (quote.) Third one?  ";
    const auto spans = segment_sentences(text);
    REQUIRE(spans.size() == 3);
    for (const auto& s : spans) {
        CHECK(s.text == text.substr(s.char_start, s.char_end - s.char_start));
        CHECK_FALSE(s.text.empty());
    }
    for (std::size_t i = 1; i < spans.size(); ++i)
        CHECK(spans[i].char_start >= spans[i - 1].char_end);
}

TEST_CASE("segmenter handles a sentence without terminal punctuation") {
    const auto spans = segment_sentences("Complete sentence. trailing fragment");
    REQUIRE(spans.size() == 1);
    // Lowercase continuation never splits; the fragment joins the sentence.
    CHECK(spans[0].text == "Complete sentence. trailing fragment");
}

TEST_CASE("windows: strides, partial tail, degenerate sizes") {
    const auto ten = make_sentences(10);
    const auto blocks = build_windows(ten, 8, 2);
    REQUIRE(blocks.size() == 2);
    CHECK(blocks[0].start_index == 0);
    CHECK(blocks[0].sentences.size() == 8);
    CHECK(blocks[1].start_index == 6);
    CHECK(blocks[1].sentences.size() == 4);

    // n <= w: exactly one block.
    CHECK(build_windows(make_sentences(8), 8, 2).size() == 1);
    CHECK(build_windows(make_sentences(3), 8, 2).size() == 1);
    CHECK(build_windows({}, 8, 2).empty());

    // o = 0: disjoint cover.
    const auto disjoint = build_windows(make_sentences(9), 4, 0);
    REQUIRE(disjoint.size() == 3);
    CHECK(disjoint[2].sentences.size() == 1);
    int covered = 0;
    for (const auto& b : disjoint)
        covered += static_cast<int>(b.sentences.size());
    CHECK(covered == 9);

    CHECK_THROWS_AS(build_windows(ten, 4, 4), ConfigError);
}

TEST_CASE("consecutive block starts are w-o apart") {
    for (int n : {5, 13, 40, 100}) {
        for (int w : {3, 8}) {
            for (int o : {0, 2}) {
                const auto blocks = build_windows(make_sentences(n), w, o);
                for (std::size_t i = 1; i < blocks.size(); ++i)
                    CHECK(blocks[i].start_index - blocks[i - 1].start_index == w - o);
                CHECK(blocks.back().start_index +
                          static_cast<int>(blocks.back().sentences.size()) == n);
            }
        }
    }
}

TEST_CASE("interpolated percentile matches the brute-force oracle") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> unif(0.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<int> len(1, 12);
        std::vector<double> xs(static_cast<std::size_t>(len(rng)));
        for (auto& x : xs)
            x = unif(rng);
        for (double p : {5.0, 50.0, 95.0, 99.0})
            CHECK(interpolated_percentile(xs, p) ==
                  doctest::Approx(oracle_percentile(xs, p)).epsilon(1e-12));
    }
}

TEST_CASE("breakpoint example from hand interpolation") {
    // d = [0.05, 0.08, 0.10, 0.90]; P95 = 0.10 + 0.85 * 0.80 = 0.78.
    const auto embeddings = embeddings_with_distances({0.05, 0.08, 0.10, 0.90});
    const auto splits = breakpoints(embeddings, 95.0);
    REQUIRE(splits.size() == 1);
    CHECK(splits[0] == 3);
}

TEST_CASE("breakpoints edge cases") {
    // All-identical embeddings: nothing strictly above a zero P95.
    std::vector<EmbeddingVector> same(5, testsupport::axis_vector(4, 0));
    CHECK(breakpoints(same, 95.0).empty());

    // Constant distances: ties are not strictly above.
    CHECK(breakpoints(embeddings_with_distances({0.3, 0.3, 0.3, 0.3}), 95.0).empty());

    // Fewer than 4 distances: never split.
    CHECK(breakpoints(embeddings_with_distances({0.01, 0.9}), 95.0).empty());

    std::vector<EmbeddingVector> one(1, testsupport::axis_vector(4, 0));
    CHECK_THROWS_AS(breakpoints(one, 95.0), InputError);
}

TEST_CASE("breakpoints against a brute-force reimplementation") {
    std::mt19937_64 rng(33);
    std::uniform_real_distribution<double> unif(0.0, 1.2);
    std::uniform_int_distribution<int> len(2, 10);
    for (int trial = 0; trial < 200; ++trial) {
        const int k = len(rng);
        std::vector<double> d(static_cast<std::size_t>(k));
        for (auto& x : d)
            x = unif(rng);
        const auto embeddings = embeddings_with_distances(d);

        // Oracle: recompute distances from the embeddings themselves.
        std::vector<double> dist;
        for (std::size_t j = 0; j + 1 < embeddings.size(); ++j)
            dist.push_back(1.0 - static_cast<double>(
                                     cosine_similarity(embeddings[j], embeddings[j + 1])));
        std::vector<int> expected;
        if (dist.size() >= 4) {
            const double cut = oracle_percentile(dist, 95.0);
            for (std::size_t j = 0; j < dist.size(); ++j)
                if (dist[j] > cut)
                    expected.push_back(static_cast<int>(j));
        }
        CHECK(breakpoints(embeddings, 95.0) == expected);
    }
}

TEST_CASE("form_chunks splits blocks at breakpoints") {
    const auto blocks = build_windows(make_sentences(8), 8, 2);
    REQUIRE(blocks.size() == 1);

    // Split after the third sentence (gap index 2): 0-2 and 3-7.
    auto chunks = form_chunks(blocks, {{2}});
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0].sentence_range == std::pair{0, 2});
    CHECK(chunks[1].sentence_range == std::pair{3, 7});
    CHECK(chunks[0].content == "Sentence 0. Sentence 1. Sentence 2.");

    // No breakpoints: one chunk per block.
    chunks = form_chunks(blocks, {{}});
    REQUIRE(chunks.size() == 1);
    CHECK(chunks[0].sentence_range == std::pair{0, 7});
}

TEST_CASE("overlapping windows duplicate shared sentences until merge") {
    const auto blocks = build_windows(make_sentences(6), 4, 2);
    REQUIRE(blocks.size() == 2); // [0..3], [2..5]
    const auto chunks = form_chunks(blocks, {{}, {}});
    REQUIRE(chunks.size() == 2);
    // Shared sentences 2 and 3 appear in both chunks.
    CHECK(chunks[0].ordinals() == std::vector<int>{0, 1, 2, 3});
    CHECK(chunks[1].ordinals() == std::vector<int>{2, 3, 4, 5});
}

TEST_CASE("merge collapses identical chunks and respects the threshold") {
    TokenHashEmbedder embedder(128);
    auto a = chunk_of({0, 1}, "shared vocabulary tokens", embedder);
    auto b = chunk_of({0, 1}, "shared vocabulary tokens", embedder);
    auto c = chunk_of({4, 5}, "completely different words", embedder);

    MergeStats stats;
    const auto merged = merge_chunks({a, b, c}, 0.85, 1 << 20, embedder, &stats);
    REQUIRE(merged.size() == 2);
    CHECK(stats.merges == 1);
    CHECK(merged[0].ordinals() == std::vector<int>{0, 1});
    CHECK(merged[1].ordinals() == std::vector<int>{4, 5});
}

TEST_CASE("merge is a fixpoint when nothing exceeds tau") {
    TokenHashEmbedder embedder(128);
    auto a = chunk_of({0}, "apples oranges pears", embedder);
    auto b = chunk_of({1}, "steel concrete girders", embedder);
    const auto merged = merge_chunks({a, b}, 0.85, 1 << 20, embedder);
    CHECK(ordinal_sets(merged) == ordinal_sets({a, b}));
}

TEST_CASE("merge deduplicates shared sentence ordinals") {
    TokenHashEmbedder embedder(128);
    auto a = chunk_of({0, 1, 2}, "quarterly revenue figures", embedder);
    auto b = chunk_of({2, 3}, "quarterly revenue figures", embedder);
    const auto merged = merge_chunks({a, b}, 0.5, 1 << 20, embedder);
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].ordinals() == std::vector<int>{0, 1, 2, 3});
    // Token monotonicity: dedup never adds text.
    CHECK(merged[0].token_estimate <= a.token_estimate + b.token_estimate);
}

TEST_CASE("merge is input-order insensitive") {
    TokenHashEmbedder embedder(128);
    std::vector<TextChunk> chunks;
    chunks.push_back(chunk_of({0, 1}, "alpha beta gamma", embedder));
    chunks.push_back(chunk_of({1, 2}, "alpha beta gamma", embedder));
    chunks.push_back(chunk_of({4, 5}, "delta epsilon zeta", embedder));
    chunks.push_back(chunk_of({5, 6}, "delta epsilon zeta", embedder));
    chunks.push_back(chunk_of({8}, "unrelated lonely words", embedder));

    const auto reference = ordinal_sets(merge_chunks(chunks, 0.85, 1 << 20, embedder));

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        auto shuffled = chunks;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(ordinal_sets(merge_chunks(shuffled, 0.85, 1 << 20, embedder)) ==
              reference);
    }
}

TEST_CASE("size cap blocks merges and records them") {
    TokenHashEmbedder embedder(128);
    auto a = chunk_of({0, 1, 2, 3}, "identical merge candidates", embedder);
    auto b = chunk_of({10, 11, 12, 13}, "identical merge candidates", embedder);
    MergeStats stats;
    // Cap below the merged size: the pair stays split.
    const auto merged = merge_chunks({a, b}, 0.85, a.token_estimate + 1, embedder, &stats);
    CHECK(merged.size() == 2);
    REQUIRE(stats.blocked.size() == 1);
    CHECK(stats.blocked[0].similarity > 0.85f);
    CHECK(stats.merges == 0);

    // Final pairs either sit below tau or were blocked by the cap.
    for (std::size_t i = 0; i < merged.size(); ++i)
        for (std::size_t j = i + 1; j < merged.size(); ++j) {
            const float sim =
                cosine_similarity(*merged[i].embedding, *merged[j].embedding);
            CHECK((sim <= 0.85f || !stats.blocked.empty()));
        }
}

TEST_CASE("merge requires embedded chunks") {
    TokenHashEmbedder embedder(16);
    TextChunk raw = make_chunk({{0, "some text", 2}});
    CHECK_THROWS_AS(merge_chunks({raw}, 0.85, 1024, embedder), InputError);
}

TEST_CASE("chunk_document trivial inputs") {
    TokenHashEmbedder embedder(64);
    EngineConfig cfg;
    cfg.embed_dim = 64;

    CHECK(chunk_document("", cfg, embedder, "doc").chunks.empty());

    const auto single = chunk_document("One lonely sentence.", cfg, embedder, "doc");
    REQUIRE(single.chunks.size() == 1);
    CHECK(single.chunks[0].content == "One lonely sentence.");
    CHECK(single.chunks[0].id.str() == "doc/text/0");
}

TEST_CASE("redundancy-planted corpus merges back to its paragraphs") {
    TokenHashEmbedder embedder(512);
    EngineConfig cfg;
    cfg.embed_dim = 512;
    cfg.window_size = 8;
    cfg.overlap = 4;

    const int paragraphs = 10;
    const auto result =
        chunk_document(redundancy_corpus(paragraphs), cfg, embedder, "doc");

    CHECK(result.chunks.size() == paragraphs);
    // Brute-force expectation: interior paragraphs duplicated across two
    // windows, edge paragraphs once -> 2(k-1) pre-merge chunks.
    CHECK(result.premerge_chunk_count == 2 * (paragraphs - 1));

    // Reduction matches 1 - k/(2k-2) on this construction.
    const double expected = 1.0 - static_cast<double>(paragraphs) /
                                      static_cast<double>(2 * paragraphs - 2);
    CHECK(result.reduction_ratio == doctest::Approx(expected).epsilon(0.02));
    CHECK(result.reduction_ratio >= 0.40);
}

TEST_CASE("no sentence ordinal is lost across the pipeline") {
    TokenHashEmbedder embedder(128);
    EngineConfig cfg;
    cfg.embed_dim = 128;
    cfg.window_size = 5;
    cfg.overlap = 2;

    std::string text;
    for (int i = 0; i < 23; ++i)
        text += "Sentence number " + std::to_string(i) + " talks about topic" +
                std::to_string(i / 3) + ". ";
    const auto sentences = segment_sentences(text);
    const auto result = chunk_document(text, cfg, embedder, "doc");

    std::set<int> seen;
    for (const auto& c : result.chunks)
        for (int o : c.ordinals())
            seen.insert(o);
    std::set<int> expected;
    for (const auto& s : sentences)
        expected.insert(s.index);
    CHECK(seen == expected);
}

TEST_CASE("global breakpoint scope is available as a config switch") {
    TokenHashEmbedder embedder(128);
    EngineConfig cfg;
    cfg.embed_dim = 128;
    cfg.global_breakpoints = true;
    const auto result = chunk_document(redundancy_corpus(6), cfg, embedder, "doc");
    CHECK_FALSE(result.chunks.empty());
    std::set<int> seen;
    for (const auto& c : result.chunks)
        for (int o : c.ordinals())
            seen.insert(o);
    CHECK(seen.size() == 24);
}

TEST_CASE("token estimate counts whitespace-separated tokens") {
    CHECK(estimate_tokens("") == 0);
    CHECK(estimate_tokens("one") == 1);
    CHECK(estimate_tokens("  two   tokens  ") == 2);
    CHECK(estimate_tokens("a b\tc\nd") == 4);
}
