#include "finrag/gateway.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace finrag {

using nlohmann::json;

std::vector<ScriptedGateway::Rule>
ScriptedGateway::load_script(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw InputError("cannot open gateway script: " + path.string());
    std::vector<Rule> rules;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        json row = json::parse(line, nullptr, false);
        if (row.is_discarded() || !row.contains("match_substring") ||
            !row.contains("response_text"))
            throw InputError(path.string() + ":" + std::to_string(lineno) +
                             ": expected {\"match_substring\", \"response_text\"}");
        rules.push_back({row["match_substring"].get<std::string>(),
                         row["response_text"].get<std::string>()});
    }
    return rules;
}

void ScriptedGateway::add_rule(std::string match, std::string response) {
    std::lock_guard lock(mutex_);
    rules_.push_back({std::move(match), std::move(response)});
}

ChatResponse ScriptedGateway::chat(const ChatRequest& req) {
    std::lock_guard lock(mutex_);
    ++calls_;
    seen_.push_back(req);
    ChatResponse res;
    res.text = fallback_reply_;
    for (const auto& rule : rules_) {
        if (req.user.find(rule.match_substring) != std::string::npos ||
            req.system.find(rule.match_substring) != std::string::npos) {
            res.text = rule.response_text;
            break;
        }
    }
    res.prompt_tokens = static_cast<int>(req.user.size() / 4);
    res.completion_tokens = static_cast<int>(res.text.size() / 4);
    return res;
}

int ScriptedGateway::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::vector<ChatRequest> ScriptedGateway::requests() const {
    std::lock_guard lock(mutex_);
    return seen_;
}

} // namespace finrag
