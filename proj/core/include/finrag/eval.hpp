#pragma once
// Offline QA evaluation: normalized exact match with numeric-unit
// canonicalization ("1,000 million" == "1 billion"), scored per question
// type (text / image / table / combined).

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "finrag/embedder.hpp"
#include "finrag/gateway.hpp"
#include "finrag/store.hpp"

namespace finrag {

// Canonical answer form: case-folded, currency symbols and thousands
// separators stripped, scale words (thousand/million/billion/trillion)
// folded into the preceding number, numbers rendered canonically.
std::string normalize_answer(std::string_view raw);

bool answers_match(std::string_view generated, std::string_view gold);

struct QaItem {
    std::string question;
    std::string answer;
    std::string type; // "text", "image", "table", "combined"
};

// JSONL rows: {"question", "answer", "type"}.
std::vector<QaItem> load_qa_set(const std::filesystem::path& path);

struct EvalTypeRow {
    std::string type;
    int questions = 0;
    int correct = 0;
    double accuracy() const {
        return questions == 0 ? 0.0
                              : static_cast<double>(correct) /
                                    static_cast<double>(questions);
    }
};

struct EvalReport {
    std::vector<EvalTypeRow> per_type; // fixed order: text, image, table, combined
    int questions = 0;
    int correct = 0;
    double accuracy() const {
        return questions == 0 ? 0.0
                              : static_cast<double>(correct) /
                                    static_cast<double>(questions);
    }
};

EvalReport run_eval(const std::vector<QaItem>& items, const KnowledgeBase& kb,
                    Embedder& embedder, ChatGateway& gateway);

} // namespace finrag
