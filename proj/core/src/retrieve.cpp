#include "finrag/retrieve.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <nlohmann/json.hpp>

#include "finrag/chunk.hpp"

namespace finrag {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

json hits_to_json(const std::vector<SearchHit>& hits) {
    json arr = json::array();
    for (const auto& h : hits)
        arr.push_back({{"id", h.id.str()}, {"similarity", h.similarity}});
    return arr;
}

} // namespace

Query make_query(std::string text, const EngineConfig& config, Embedder& embedder) {
    if (text.find_first_not_of(" \t\r\n") == std::string::npos)
        throw InputError("query text must be non-empty");
    Query q;
    q.embedding = embedder.embed_one(text);
    q.text = std::move(text);
    q.config = config;
    return q;
}

std::string_view tier_name(Tier t) {
    return t == Tier::TextOnly ? "TextOnly" : "Fallback";
}

json TierTrace::to_json(bool include_timings) const {
    json j;
    j["tier"] = std::string(tier_name(tier));
    j["text_hits"] = hits_to_json(text_hits);
    j["table_hits"] = hits_to_json(table_hits);
    j["image_hits"] = hits_to_json(image_hits);
    j["thresholds"] = {{"theta_text", theta_text},
                       {"theta_table", theta_table},
                       {"theta_image", theta_image},
                       {"min_text_hits", min_text_hits}};
    j["prompt_token_estimate"] = prompt_token_estimate;
    json trimmed_ids = json::array();
    for (const auto& id : trimmed)
        trimmed_ids.push_back(id.str());
    j["trimmed"] = trimmed_ids;
    if (include_timings)
        j["timings_ms"] = {{"embed", timings.embed_ms},
                           {"text_search", timings.text_search_ms},
                           {"fallback", timings.fallback_ms},
                           {"assemble", timings.assemble_ms},
                           {"gateway", timings.gateway_ms}};
    return j;
}

std::vector<SearchHit> retrieve_text(const Query& q, const VectorIndex& index) {
    if (index.size() == 0)
        return {};
    return index.search_threshold(q.embedding, q.config.theta_text,
                                  q.config.text_hit_cap);
}

Tier decide_tier(const std::vector<SearchHit>& hits, int n) {
    return static_cast<int>(hits.size()) >= n ? Tier::TextOnly : Tier::Fallback;
}

std::pair<std::vector<SearchHit>, std::vector<SearchHit>>
retrieve_fallback(const Query& q, const VectorIndex& table_index,
                  const VectorIndex& image_index) {
    std::vector<SearchHit> tables, images;
    if (table_index.size() > 0)
        tables = table_index.search_threshold(q.embedding, q.config.theta_table,
                                              q.config.table_top);
    if (image_index.size() > 0)
        images = image_index.search_threshold(q.embedding, q.config.theta_image,
                                              q.config.image_top);
    return {std::move(tables), std::move(images)};
}

namespace {

struct ContextBlock {
    ChunkId id;
    Modality modality;
    float similarity;
    std::string body;
    int tokens;
};

std::vector<ContextBlock> collect_blocks(const KnowledgeBase& kb,
                                         const TierTrace& trace) {
    std::vector<ContextBlock> blocks;
    for (const auto& h : trace.text_hits) {
        const auto* rec = kb.text(h.id);
        if (!rec)
            throw DataError("trace references unknown text chunk: " + h.id.str());
        std::string body = "[" + h.id.str() + "]\n" + rec->content;
        const int tokens = estimate_tokens(body);
        blocks.push_back({h.id, Modality::Text, h.similarity, std::move(body), tokens});
    }
    for (const auto& h : trace.table_hits) {
        const auto* rec = kb.table(h.id);
        if (!rec)
            throw DataError("trace references unknown table record: " + h.id.str());
        std::string body = "[" + h.id.str() + "]\nSUMMARY: " + rec->summary +
                           "\nJSON: " + rec->structured_json;
        const int tokens = estimate_tokens(body);
        blocks.push_back({h.id, Modality::Table, h.similarity, std::move(body), tokens});
    }
    for (const auto& h : trace.image_hits) {
        const auto* rec = kb.image(h.id);
        if (!rec)
            throw DataError("trace references unknown image record: " + h.id.str());
        std::string body = "[" + h.id.str() + "]\n" + rec->summary;
        const int tokens = estimate_tokens(body);
        blocks.push_back({h.id, Modality::Image, h.similarity, std::move(body), tokens});
    }
    return blocks;
}

} // namespace

PromptBundle assemble_prompt(const Query& q, const KnowledgeBase& kb, TierTrace& trace) {
    PromptBundle out;
    out.system =
        "You answer questions about financial documents strictly from the "
        "context provided below. Do not use outside knowledge. If the context "
        "does not contain the information needed to answer, reply exactly: " +
        std::string(kDeferralSentinel);

    auto blocks = collect_blocks(kb, trace);

    // Budget: drop the worst-ranked context first (lowest similarity,
    // ties toward the later id) until the estimate fits.
    const int base_tokens = estimate_tokens(out.system) + estimate_tokens(q.text) + 16;
    auto total = [&] {
        int t = base_tokens;
        for (const auto& b : blocks)
            t += b.tokens;
        return t;
    };
    while (!blocks.empty() && total() > q.config.max_context_tokens) {
        auto worst = std::min_element(blocks.begin(), blocks.end(),
                                      [](const ContextBlock& a, const ContextBlock& b) {
                                          if (a.similarity != b.similarity)
                                              return a.similarity < b.similarity;
                                          return a.id > b.id;
                                      });
        trace.trimmed.push_back(worst->id);
        blocks.erase(worst);
    }

    std::ostringstream user;
    user << "QUESTION: " << q.text << "\n";
    bool any = false;
    for (auto [modality, header] :
         {std::pair{Modality::Text, "TEXT CONTEXT:"},
          std::pair{Modality::Table, "TABLE CONTEXT:"},
          std::pair{Modality::Image, "IMAGE CONTEXT:"}}) {
        bool wrote_header = false;
        for (const auto& b : blocks) {
            if (b.modality != modality)
                continue;
            if (!wrote_header) {
                user << "\n" << header << "\n";
                wrote_header = true;
                any = true;
            }
            user << b.body << "\n";
        }
    }
    if (!any)
        user << "\nNo context was retrieved for this question.\n";

    out.user = user.str();
    out.token_estimate = estimate_tokens(out.system) + estimate_tokens(out.user);
    trace.prompt_token_estimate = out.token_estimate;
    return out;
}

Answer answer(const Query& q, const KnowledgeBase& kb, ChatGateway& gateway) {
    TierTrace trace;
    trace.theta_text = q.config.theta_text;
    trace.theta_table = q.config.theta_table;
    trace.theta_image = q.config.theta_image;
    trace.min_text_hits = q.config.min_text_hits;

    auto t0 = Clock::now();
    trace.text_hits = retrieve_text(q, kb.text_index());
    trace.timings.text_search_ms = ms_since(t0);

    trace.tier = decide_tier(trace.text_hits, q.config.min_text_hits);

    if (trace.tier == Tier::Fallback) {
        t0 = Clock::now();
        auto [tables, images] = retrieve_fallback(q, kb.table_index(), kb.image_index());
        trace.table_hits = std::move(tables);
        trace.image_hits = std::move(images);
        trace.timings.fallback_ms = ms_since(t0);
    }

    t0 = Clock::now();
    ChatRequest req;
    {
        const auto bundle = assemble_prompt(q, kb, trace);
        req.system = bundle.system;
        req.user = bundle.user;
    }
    trace.timings.assemble_ms = ms_since(t0);

    t0 = Clock::now();
    ChatResponse res;
    try {
        res = gateway.chat(req);
    } catch (const TransportError& e) {
        throw AnswerTransportError(e.what(), std::move(trace));
    }
    trace.timings.gateway_ms = ms_since(t0);

    Answer out;
    out.text = res.text;
    std::string_view reply = out.text;
    const auto start = reply.find_first_not_of(" \t\r\n\"'");
    if (start != std::string_view::npos)
        reply.remove_prefix(start);
    if (reply.size() >= kDeferralSentinel.size()) {
        bool match = true;
        for (std::size_t i = 0; i < kDeferralSentinel.size(); ++i)
            if (std::tolower(static_cast<unsigned char>(reply[i])) !=
                kDeferralSentinel[i]) {
                match = false;
                break;
            }
        out.insufficient = match;
    }
    if (out.text.empty())
        out.insufficient = true;
    out.trace = std::move(trace);
    return out;
}

} // namespace finrag
