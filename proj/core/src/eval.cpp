#include "finrag/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "finrag/retrieve.hpp"

namespace finrag {

using nlohmann::json;

namespace {

const std::map<std::string, double, std::less<>> kScaleWords = {
    {"thousand", 1e3}, {"million", 1e6}, {"billion", 1e9}, {"trillion", 1e12},
    {"k", 1e3},        {"m", 1e6},       {"bn", 1e9},      {"mn", 1e6}};

bool is_currency(char c) { return c == '$' || c == '%'; }

// Lexes raw answer text into lowercase word tokens and numeric tokens,
// dropping currency symbols, percent signs and thousands separators.
struct Token {
    bool numeric = false;
    double value = 0;
    std::string word;
};

std::vector<Token> lex(std::string_view raw) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    const std::size_t n = raw.size();
    while (i < n) {
        const char c = raw[i];
        if (std::isspace(static_cast<unsigned char>(c)) || is_currency(c) ||
            c == '(' || c == ')' || c == '"' || c == '\'') {
            ++i;
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && i + 1 < n && std::isdigit(static_cast<unsigned char>(raw[i + 1]))) ||
            (c == '-' && i + 1 < n && std::isdigit(static_cast<unsigned char>(raw[i + 1])))) {
            // Number: digits with optional thousands commas and decimal.
            std::string num;
            if (c == '-') {
                num += '-';
                ++i;
            }
            bool seen_dot = false;
            while (i < n) {
                const char d = raw[i];
                if (std::isdigit(static_cast<unsigned char>(d))) {
                    num += d;
                    ++i;
                } else if (d == ',' && i + 1 < n &&
                           std::isdigit(static_cast<unsigned char>(raw[i + 1]))) {
                    ++i; // thousands separator
                } else if (d == '.' && !seen_dot && i + 1 < n &&
                           std::isdigit(static_cast<unsigned char>(raw[i + 1]))) {
                    seen_dot = true;
                    num += d;
                    ++i;
                } else {
                    break;
                }
            }
            Token t;
            t.numeric = true;
            t.value = std::strtod(num.c_str(), nullptr);
            tokens.push_back(t);
            continue;
        }
        if (std::isalnum(static_cast<unsigned char>(c))) {
            std::string word;
            while (i < n && std::isalnum(static_cast<unsigned char>(raw[i]))) {
                word += static_cast<char>(
                    std::tolower(static_cast<unsigned char>(raw[i])));
                ++i;
            }
            tokens.push_back({false, 0, std::move(word)});
            continue;
        }
        ++i; // other punctuation
    }
    return tokens;
}

std::string format_number(double v) {
    if (std::abs(v) < 1e15 && v == std::floor(v)) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.0f", v);
        return buf;
    }
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

} // namespace

std::string normalize_answer(std::string_view raw) {
    const auto tokens = lex(raw);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const Token& t = tokens[i];
        if (t.numeric) {
            double v = t.value;
            // Fold a following scale word into the number.
            if (i + 1 < tokens.size() && !tokens[i + 1].numeric) {
                auto it = kScaleWords.find(tokens[i + 1].word);
                if (it != kScaleWords.end()) {
                    v *= it->second;
                    ++i;
                }
            }
            out.push_back(format_number(v));
        } else {
            // A bare scale word with no preceding number stays literal.
            out.push_back(t.word);
        }
    }
    std::string joined;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (i > 0)
            joined += ' ';
        joined += out[i];
    }
    return joined;
}

bool answers_match(std::string_view generated, std::string_view gold) {
    const std::string ng = normalize_answer(generated);
    const std::string no = normalize_answer(gold);
    if (ng == no)
        return true;
    // A generated sentence that ends or begins with the exact gold value
    // still counts; anything looser would hide real mismatches.
    if (!no.empty() && ng.size() > no.size()) {
        if (ng.rfind(no) == ng.size() - no.size() &&
            ng[ng.size() - no.size() - 1] == ' ')
            return true;
        if (ng.rfind(no, 0) == 0 && ng[no.size()] == ' ')
            return true;
    }
    return false;
}

std::vector<QaItem> load_qa_set(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw InputError("cannot open QA set: " + path.string());
    std::vector<QaItem> items;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        json row = json::parse(line, nullptr, false);
        if (row.is_discarded() || !row.contains("question") || !row.contains("answer"))
            throw InputError(path.string() + ":" + std::to_string(lineno) +
                             ": expected {\"question\", \"answer\", \"type\"}");
        QaItem item;
        item.question = row["question"].get<std::string>();
        item.answer = row["answer"].get<std::string>();
        item.type = row.value("type", "text");
        if (item.type != "text" && item.type != "image" && item.type != "table" &&
            item.type != "combined")
            throw InputError(path.string() + ":" + std::to_string(lineno) +
                             ": type must be text|image|table|combined");
        items.push_back(std::move(item));
    }
    return items;
}

EvalReport run_eval(const std::vector<QaItem>& items, const KnowledgeBase& kb,
                    Embedder& embedder, ChatGateway& gateway) {
    EvalReport report;
    report.per_type = {{"text"}, {"image"}, {"table"}, {"combined"}};

    for (const auto& item : items) {
        const Query q = make_query(item.question, kb.config(), embedder);
        const Answer a = answer(q, kb, gateway);
        const bool ok = !a.insufficient && answers_match(a.text, item.answer);

        report.questions += 1;
        if (ok)
            report.correct += 1;
        for (auto& row : report.per_type) {
            if (row.type == item.type) {
                row.questions += 1;
                if (ok)
                    row.correct += 1;
            }
        }
    }
    return report;
}

} // namespace finrag
