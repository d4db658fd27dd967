#include "finrag/chunk.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <set>

#include "finrag/similarity.hpp"

namespace finrag {
namespace {

bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

bool is_upper_or_digit(char c) {
    unsigned char u = static_cast<unsigned char>(c);
    return std::isupper(u) != 0 || std::isdigit(u) != 0;
}

constexpr std::array<std::string_view, 8> kAbbreviations = {
    "vs.", "e.g.", "i.e.", "u.s.", "inc.", "corp.", "no.", "fig."};

// The token ending at position `dot` (inclusive), lowercased: the
// maximal run of non-whitespace characters before it plus the dot.
std::string trailing_token(std::string_view text, std::size_t dot) {
    std::size_t begin = dot;
    while (begin > 0 && !is_space(text[begin - 1]))
        --begin;
    std::string tok(text.substr(begin, dot - begin + 1));
    std::transform(tok.begin(), tok.end(), tok.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return tok;
}

bool is_abbreviation(std::string_view text, std::size_t dot) {
    const std::string tok = trailing_token(text, dot);
    for (auto abbr : kAbbreviations)
        if (tok == abbr)
            return true;
    return false;
}

bool is_closing(char c) {
    return c == '"' || c == '\'' || c == ')' || c == ']';
}

} // namespace

int estimate_tokens(std::string_view text) {
    int count = 0;
    bool in_token = false;
    for (char c : text) {
        if (is_space(c)) {
            in_token = false;
        } else if (!in_token) {
            in_token = true;
            ++count;
        }
    }
    return count;
}

std::vector<SentenceSpan> segment_sentences(std::string_view text) {
    std::vector<SentenceSpan> spans;
    const std::size_t n = text.size();
    std::size_t pos = 0;

    auto emit = [&](std::size_t start, std::size_t end) {
        // Trim trailing whitespace; start is already at a non-space.
        while (end > start && is_space(text[end - 1]))
            --end;
        if (end <= start)
            return;
        SentenceSpan s;
        s.index = static_cast<int>(spans.size());
        s.char_start = start;
        s.char_end = end;
        s.text = std::string(text.substr(start, end - start));
        spans.push_back(std::move(s));
    };

    while (pos < n) {
        while (pos < n && is_space(text[pos]))
            ++pos;
        if (pos >= n)
            break;
        const std::size_t start = pos;
        std::size_t end = n;

        for (std::size_t i = start; i < n; ++i) {
            const char c = text[i];
            if (c != '.' && c != '!' && c != '?')
                continue;
            if (c == '.') {
                // Decimal guard: a dot between digits never terminates.
                if (i > start && i + 1 < n &&
                    std::isdigit(static_cast<unsigned char>(text[i - 1])) &&
                    std::isdigit(static_cast<unsigned char>(text[i + 1])))
                    continue;
                if (is_abbreviation(text, i))
                    continue;
            }
            // Absorb closing quotes/brackets after the terminal.
            std::size_t j = i + 1;
            while (j < n && is_closing(text[j]))
                ++j;
            if (j >= n) {
                end = j;
                break;
            }
            if (!is_space(text[j]))
                continue;
            std::size_t k = j;
            while (k < n && is_space(text[k]))
                ++k;
            if (k >= n || is_upper_or_digit(text[k])) {
                end = j;
                break;
            }
        }

        emit(start, end);
        pos = end;
    }
    return spans;
}

std::vector<Block> build_windows(const std::vector<SentenceSpan>& sentences, int w,
                                 int o) {
    if (w < 1)
        throw ConfigError("window_size must be >= 1");
    if (o < 0 || o >= w)
        throw ConfigError("overlap must satisfy 0 <= overlap < window_size");

    std::vector<Block> blocks;
    const int n = static_cast<int>(sentences.size());
    if (n == 0)
        return blocks;

    const int stride = w - o;
    int start = 0;
    while (true) {
        Block b;
        b.start_index = start;
        const int end = std::min(start + w, n);
        b.sentences.assign(sentences.begin() + start, sentences.begin() + end);
        blocks.push_back(std::move(b));
        if (start + w >= n)
            break;
        start += stride;
    }
    return blocks;
}

double interpolated_percentile(std::vector<double> values, double pct) {
    if (values.empty())
        throw InputError("percentile of an empty sample");
    if (pct <= 0.0 || pct >= 100.0)
        throw ConfigError("percentile must be in (0, 100)");
    std::sort(values.begin(), values.end());
    const double rank = pct / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(rank);
    const double frac = rank - static_cast<double>(lo);
    if (lo + 1 >= values.size())
        return values.back();
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

std::vector<int> breakpoints(const std::vector<EmbeddingVector>& embeddings,
                             double percentile) {
    if (embeddings.size() < 2)
        throw InputError("breakpoints need at least 2 embeddings");

    std::vector<double> distances;
    distances.reserve(embeddings.size() - 1);
    for (std::size_t j = 0; j + 1 < embeddings.size(); ++j)
        distances.push_back(
            static_cast<double>(cosine_distance(embeddings[j], embeddings[j + 1])));

    std::vector<int> splits;
    if (distances.size() < 4)
        return splits;

    const double cutoff = interpolated_percentile(distances, percentile);
    for (std::size_t j = 0; j < distances.size(); ++j)
        if (distances[j] > cutoff)
            splits.push_back(static_cast<int>(j));
    return splits;
}

void TextChunk::rebuild_from_pieces() {
    content.clear();
    token_estimate = 0;
    if (pieces.empty()) {
        sentence_range = {0, 0};
        return;
    }
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        if (i > 0)
            content += (pieces[i].ordinal == pieces[i - 1].ordinal + 1) ? " " : "\n";
        content += pieces[i].text;
        token_estimate += pieces[i].tokens;
    }
    sentence_range = {pieces.front().ordinal, pieces.back().ordinal};
}

std::vector<int> TextChunk::ordinals() const {
    std::vector<int> out;
    out.reserve(pieces.size());
    for (const auto& p : pieces)
        out.push_back(p.ordinal);
    return out;
}

TextChunk make_chunk(std::vector<SentencePiece> pieces) {
    std::sort(pieces.begin(), pieces.end(),
              [](const SentencePiece& a, const SentencePiece& b) {
                  return a.ordinal < b.ordinal;
              });
    pieces.erase(std::unique(pieces.begin(), pieces.end(),
                             [](const SentencePiece& a, const SentencePiece& b) {
                                 return a.ordinal == b.ordinal;
                             }),
                 pieces.end());
    TextChunk c;
    c.pieces = std::move(pieces);
    c.rebuild_from_pieces();
    return c;
}

std::vector<TextChunk> form_chunks(const std::vector<Block>& blocks,
                                   const std::vector<std::vector<int>>& block_breakpoints) {
    if (blocks.size() != block_breakpoints.size())
        throw InputError("one breakpoint set per block required");

    std::vector<TextChunk> chunks;
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        const Block& block = blocks[bi];
        if (block.sentences.empty())
            continue;
        std::set<int> splits(block_breakpoints[bi].begin(), block_breakpoints[bi].end());

        std::vector<SentencePiece> pieces;
        for (std::size_t si = 0; si < block.sentences.size(); ++si) {
            const SentenceSpan& s = block.sentences[si];
            pieces.push_back({s.index, s.text, estimate_tokens(s.text)});
            const bool split_here = splits.count(static_cast<int>(si)) > 0;
            if (split_here && si + 1 < block.sentences.size()) {
                chunks.push_back(make_chunk(std::move(pieces)));
                pieces.clear();
            }
        }
        if (!pieces.empty())
            chunks.push_back(make_chunk(std::move(pieces)));
    }
    return chunks;
}

namespace {

// Identity of a chunk for merge bookkeeping: its sorted ordinal set.
using OrdinalKey = std::vector<int>;

struct PairKey {
    OrdinalKey left, right;
    bool operator<(const PairKey& o) const {
        if (left != o.left)
            return left < o.left;
        return right < o.right;
    }
};

PairKey pair_key(const TextChunk& a, const TextChunk& b) {
    OrdinalKey ka = a.ordinals();
    OrdinalKey kb = b.ordinals();
    if (kb < ka)
        std::swap(ka, kb);
    return {std::move(ka), std::move(kb)};
}

} // namespace

std::vector<TextChunk> merge_chunks(std::vector<TextChunk> chunks, double tau_merge,
                                    int max_chunk_tokens, Embedder& embedder,
                                    MergeStats* stats) {
    MergeStats local;
    MergeStats& st = stats ? *stats : local;

    for (const auto& c : chunks)
        if (!c.embedding)
            throw InputError("merge_chunks requires every chunk to be embedded");

    // Slot storage with cached similarities: merging kills two slots and
    // appends one, so only the new slot's row is recomputed.
    std::vector<TextChunk> slots = std::move(chunks);
    std::vector<bool> alive(slots.size(), true);
    std::map<std::pair<std::size_t, std::size_t>, float> sims;
    auto sim_at = [&](std::size_t i, std::size_t j) {
        auto key = std::minmax(i, j);
        auto it = sims.find(key);
        if (it != sims.end())
            return it->second;
        const float s = cosine_similarity(*slots[i].embedding, *slots[j].embedding);
        sims.emplace(key, s);
        return s;
    };

    std::set<PairKey> blocked;

    while (true) {
        float best_sim = -2.0f;
        std::size_t best_i = 0, best_j = 0;
        PairKey best_key;
        bool found = false;

        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (!alive[i])
                continue;
            for (std::size_t j = i + 1; j < slots.size(); ++j) {
                if (!alive[j])
                    continue;
                PairKey key = pair_key(slots[i], slots[j]);
                if (blocked.count(key))
                    continue;
                const float sim = sim_at(i, j);
                // Ties break toward the lexicographically smallest
                // ordinal pair, independent of input order.
                if (sim > best_sim || (sim == best_sim && found && key < best_key)) {
                    best_sim = sim;
                    best_i = i;
                    best_j = j;
                    best_key = std::move(key);
                    found = true;
                }
            }
        }

        if (!found || static_cast<double>(best_sim) <= tau_merge)
            break;

        std::vector<SentencePiece> merged_pieces = slots[best_i].pieces;
        merged_pieces.insert(merged_pieces.end(), slots[best_j].pieces.begin(),
                             slots[best_j].pieces.end());
        TextChunk merged = make_chunk(std::move(merged_pieces));

        if (merged.token_estimate > max_chunk_tokens) {
            st.blocked.push_back({slots[best_i].ordinals(), slots[best_j].ordinals(),
                                  best_sim});
            blocked.insert(best_key);
            continue;
        }

        merged.embedding = embedder.embed_one(merged.content);
        st.merges += 1;

        alive[best_i] = false;
        alive[best_j] = false;
        slots.push_back(std::move(merged));
        alive.push_back(true);
    }

    std::vector<TextChunk> out;
    for (std::size_t i = 0; i < slots.size(); ++i)
        if (alive[i])
            out.push_back(std::move(slots[i]));
    std::sort(out.begin(), out.end(), [](const TextChunk& a, const TextChunk& b) {
        return a.ordinals() < b.ordinals();
    });
    return out;
}

ChunkingResult chunk_document(std::string_view text, const EngineConfig& config,
                              Embedder& embedder, std::string_view doc_id) {
    ChunkingResult result;

    const auto sentences = segment_sentences(text);
    if (sentences.empty())
        return result;

    std::vector<std::string> sentence_texts;
    sentence_texts.reserve(sentences.size());
    for (const auto& s : sentences)
        sentence_texts.push_back(s.text);
    const auto sentence_embeddings = embedder.embed_batch(sentence_texts);

    const auto blocks = build_windows(sentences, config.window_size, config.overlap);

    std::vector<std::vector<int>> block_splits(blocks.size());
    if (config.global_breakpoints && sentences.size() >= 2) {
        // One percentile over every adjacent-sentence distance in the
        // document; blocks split wherever a marked gap falls inside them.
        const auto global = breakpoints(sentence_embeddings, config.breakpoint_percentile);
        std::set<int> marked(global.begin(), global.end());
        for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
            const int start = blocks[bi].start_index;
            const int len = static_cast<int>(blocks[bi].sentences.size());
            for (int g = 0; g + 1 < len; ++g)
                if (marked.count(start + g))
                    block_splits[bi].push_back(g);
        }
    } else {
        for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
            const auto& block = blocks[bi];
            if (block.sentences.size() < 2)
                continue;
            std::vector<EmbeddingVector> block_embeddings;
            block_embeddings.reserve(block.sentences.size());
            for (const auto& s : block.sentences)
                block_embeddings.push_back(sentence_embeddings[static_cast<std::size_t>(s.index)]);
            block_splits[bi] = breakpoints(block_embeddings, config.breakpoint_percentile);
        }
    }

    auto chunks = form_chunks(blocks, block_splits);

    std::vector<std::string> chunk_texts;
    chunk_texts.reserve(chunks.size());
    for (const auto& c : chunks)
        chunk_texts.push_back(c.content);
    const auto chunk_embeddings = embedder.embed_batch(chunk_texts);
    for (std::size_t i = 0; i < chunks.size(); ++i)
        chunks[i].embedding = chunk_embeddings[i];

    result.premerge_chunk_count = static_cast<int>(chunks.size());
    for (const auto& c : chunks)
        result.premerge_tokens += c.token_estimate;

    result.chunks = merge_chunks(std::move(chunks), config.tau_merge,
                                 config.max_context_tokens / 4, embedder,
                                 &result.merge);

    for (std::size_t i = 0; i < result.chunks.size(); ++i)
        result.chunks[i].id = ChunkId{std::string(doc_id), Modality::Text,
                                      static_cast<std::uint32_t>(i)};

    for (const auto& c : result.chunks)
        result.merged_tokens += c.token_estimate;
    if (result.premerge_tokens > 0)
        result.reduction_ratio =
            1.0 - static_cast<double>(result.merged_tokens) /
                      static_cast<double>(result.premerge_tokens);
    return result;
}

} // namespace finrag
