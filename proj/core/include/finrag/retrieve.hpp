#pragma once
// Tiered retrieval: thresholded text search, escalation to table/image
// fallback when fewer than n text hits qualify, combined prompt assembly
// under a token budget, and answer generation with the deferral contract.

#include <chrono>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "finrag/config.hpp"
#include "finrag/embedder.hpp"
#include "finrag/gateway.hpp"
#include "finrag/store.hpp"
#include "finrag/types.hpp"
#include "finrag/vindex.hpp"

namespace finrag {

// The verbatim deferral sentinel the system prompt mandates when context
// is insufficient.
inline constexpr std::string_view kDeferralSentinel = "insufficient information";

struct Query {
    std::string text;
    EmbeddingVector embedding;
    EngineConfig config;
};

Query make_query(std::string text, const EngineConfig& config, Embedder& embedder);

enum class Tier { TextOnly, Fallback };

std::string_view tier_name(Tier t);

struct StageTimings {
    double embed_ms = 0;
    double text_search_ms = 0;
    double fallback_ms = 0;
    double assemble_ms = 0;
    double gateway_ms = 0;
};

struct TierTrace {
    Tier tier = Tier::TextOnly;
    std::vector<SearchHit> text_hits;  // the set T
    std::vector<SearchHit> table_hits; // T_tbl, empty unless Fallback
    std::vector<SearchHit> image_hits; // T_img, empty unless Fallback
    double theta_text = 0, theta_table = 0, theta_image = 0;
    int min_text_hits = 0;
    int prompt_token_estimate = 0;
    std::vector<ChunkId> trimmed; // contexts dropped for budget, drop order
    StageTimings timings;

    // Timings are excluded by default so traces compare stably across
    // runs and reloads.
    nlohmann::json to_json(bool include_timings = false) const;
};

struct PromptBundle {
    std::string system;
    std::string user;
    int token_estimate = 0;
};

struct Answer {
    std::string text;
    bool insufficient = false; // reply starts with the deferral sentinel
    TierTrace trace;
};

// Thresholded text retrieval at theta_text, capped at text_hit_cap.
std::vector<SearchHit> retrieve_text(const Query& q, const VectorIndex& index);

// TextOnly iff |hits| >= n. Pure.
Tier decide_tier(const std::vector<SearchHit>& hits, int n);

// Top-m tables >= theta_table and top-p images >= theta_image.
std::pair<std::vector<SearchHit>, std::vector<SearchHit>>
retrieve_fallback(const Query& q, const VectorIndex& table_index,
                  const VectorIndex& image_index);

// Sections ordered TEXT, TABLES, IMAGES; each table context carries both
// its summary and its canonical JSON. When the token estimate exceeds
// max_context_tokens, the worst-ranked contexts are dropped first and
// recorded in trace.trimmed.
PromptBundle assemble_prompt(const Query& q, const KnowledgeBase& kb, TierTrace& trace);

// Thrown when the gateway fails; carries the finished trace so the
// retrieval work is not lost.
class AnswerTransportError : public TransportError {
public:
    AnswerTransportError(const std::string& what, TierTrace trace)
        : TransportError(what), trace(std::move(trace)) {}
    TierTrace trace;
};

// Full pipeline: retrieve_text -> decide_tier -> (maybe)
// retrieve_fallback -> assemble_prompt -> exactly one gateway call.
Answer answer(const Query& q, const KnowledgeBase& kb, ChatGateway& gateway);

} // namespace finrag
