#pragma once
// Semantic chunking: sentence segmentation, sliding windows,
// embedding-distance breakpoints at a percentile, chunk formation, and
// greedy similarity merging of near-duplicate chunks.

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "finrag/config.hpp"
#include "finrag/embedder.hpp"
#include "finrag/types.hpp"

namespace finrag {

struct SentenceSpan {
    int index = 0;      // 0-based ordinal within the document
    std::string text;   // source substring, trailing whitespace trimmed
    std::size_t char_start = 0;
    std::size_t char_end = 0; // one past the last character
};

// One sliding window of sentences. Consecutive blocks start
// window_size - overlap sentences apart; the final block may be shorter.
struct Block {
    int start_index = 0;
    std::vector<SentenceSpan> sentences;
};

// A sentence inside a chunk, kept at ordinal granularity so merging can
// deduplicate sentences shared across overlapping windows.
struct SentencePiece {
    int ordinal = 0;
    std::string text;
    int tokens = 0; // whitespace-token count of `text`

    bool operator==(const SentencePiece&) const = default;
};

struct TextChunk {
    ChunkId id;
    std::vector<SentencePiece> pieces; // sorted by ordinal, unique
    std::string content;               // pieces joined in ordinal order
    std::pair<int, int> sentence_range{0, 0}; // (first, last) ordinal
    std::optional<EmbeddingVector> embedding;
    int token_estimate = 0; // sum of piece token counts

    // Rebuilds content/range/token_estimate from pieces. Non-adjacent
    // ordinal runs are joined with a newline, adjacent sentences with a
    // space.
    void rebuild_from_pieces();

    std::vector<int> ordinals() const;
};

TextChunk make_chunk(std::vector<SentencePiece> pieces);

// Deterministic rule-based sentence splitter: terminal punctuation
// followed by whitespace and an uppercase letter or digit, with an
// abbreviation stop-list {vs., e.g., i.e., U.S., Inc., Corp., No., Fig.}
// and a decimal guard ("$1.5" never splits).
std::vector<SentenceSpan> segment_sentences(std::string_view text);

// Whitespace-token count used for every token estimate in the engine.
int estimate_tokens(std::string_view text);

// Sliding windows of w sentences with overlap o (o < w). Block starts
// are 0, w-o, 2(w-o), ...; a final partial block of >= 1 sentence is
// kept. n <= w yields exactly one block.
std::vector<Block> build_windows(const std::vector<SentenceSpan>& sentences, int w,
                                 int o);

// Linear-interpolation (inclusive) percentile of `values`; pct in
// (0, 100). Well-defined for a single value.
double interpolated_percentile(std::vector<double> values, double pct);

// Splits positions within one block: computes d_j = 1 - cos(e_j, e_j+1)
// and returns every 0-based gap j with d_j strictly above the percentile
// of {d_j}. Blocks with fewer than 4 distances never split (a 95th
// percentile over <= 3 samples would shatter every small block at its
// max). Throws InputError on fewer than 2 embeddings.
std::vector<int> breakpoints(const std::vector<EmbeddingVector>& embeddings,
                             double percentile);

// Splits each block at its breakpoints; block i yields
// 1 + |breakpoints[i]| chunks. Chunks keep global sentence ordinals.
std::vector<TextChunk> form_chunks(const std::vector<Block>& blocks,
                                   const std::vector<std::vector<int>>& block_breakpoints);

struct BlockedMerge {
    std::vector<int> left_ordinals;
    std::vector<int> right_ordinals;
    float similarity = 0.0f;
};

struct MergeStats {
    int merges = 0;
    std::vector<BlockedMerge> blocked; // merges refused by the size cap
};

// Greedy merge: repeatedly merge the highest-similarity pair above
// tau_merge, deduplicating shared sentences by ordinal and re-embedding
// the merged text, until no pair qualifies. A merge whose result would
// exceed max_chunk_tokens is recorded as blocked and skipped. Ties break
// on the lexicographically smallest (left, right) ordinal sets, making
// the procedure deterministic and input-order insensitive. Output is
// ordered by lowest contained ordinal.
std::vector<TextChunk> merge_chunks(std::vector<TextChunk> chunks, double tau_merge,
                                    int max_chunk_tokens, Embedder& embedder,
                                    MergeStats* stats = nullptr);

struct ChunkingResult {
    std::vector<TextChunk> chunks;
    int premerge_chunk_count = 0;
    int premerge_tokens = 0;
    int merged_tokens = 0;
    double reduction_ratio = 0.0; // 1 - merged/premerge token totals
    MergeStats merge;
};

// Full pipeline: segment -> windows -> breakpoints -> form -> merge.
// Chunk ids are (doc_id, Text, position in output order).
ChunkingResult chunk_document(std::string_view text, const EngineConfig& config,
                              Embedder& embedder, std::string_view doc_id);

} // namespace finrag
