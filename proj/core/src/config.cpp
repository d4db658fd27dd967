#include "finrag/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace finrag {
namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        int v = std::stoi(value, &pos);
        if (pos != value.size())
            throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected integer, got '" + value + "'");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size())
            throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    std::string v = value;
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "yes" || v == "on")
        return true;
    if (v == "false" || v == "0" || v == "no" || v == "off")
        return false;
    throw ConfigError(key + ": expected boolean, got '" + value + "'");
}

struct Field {
    std::string name;
    std::function<void(EngineConfig&, const std::string&)> set;
    std::function<std::string(const EngineConfig&)> get;
};

std::string fmt_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        {"window_size",
         [](EngineConfig& c, const std::string& v) { c.window_size = parse_int("window_size", v); },
         [](const EngineConfig& c) { return std::to_string(c.window_size); }},
        {"overlap",
         [](EngineConfig& c, const std::string& v) { c.overlap = parse_int("overlap", v); },
         [](const EngineConfig& c) { return std::to_string(c.overlap); }},
        {"breakpoint_percentile",
         [](EngineConfig& c, const std::string& v) {
             c.breakpoint_percentile = parse_double("breakpoint_percentile", v);
         },
         [](const EngineConfig& c) { return fmt_double(c.breakpoint_percentile); }},
        {"tau_merge",
         [](EngineConfig& c, const std::string& v) { c.tau_merge = parse_double("tau_merge", v); },
         [](const EngineConfig& c) { return fmt_double(c.tau_merge); }},
        {"global_breakpoints",
         [](EngineConfig& c, const std::string& v) {
             c.global_breakpoints = parse_bool("global_breakpoints", v);
         },
         [](const EngineConfig& c) { return c.global_breakpoints ? std::string("true") : std::string("false"); }},
        {"batch_size",
         [](EngineConfig& c, const std::string& v) { c.batch_size = parse_int("batch_size", v); },
         [](const EngineConfig& c) { return std::to_string(c.batch_size); }},
        {"retry_limit",
         [](EngineConfig& c, const std::string& v) { c.retry_limit = parse_int("retry_limit", v); },
         [](const EngineConfig& c) { return std::to_string(c.retry_limit); }},
        {"extract_in_flight",
         [](EngineConfig& c, const std::string& v) {
             c.extract_in_flight = parse_int("extract_in_flight", v);
         },
         [](const EngineConfig& c) { return std::to_string(c.extract_in_flight); }},
        {"min_text_hits",
         [](EngineConfig& c, const std::string& v) { c.min_text_hits = parse_int("min_text_hits", v); },
         [](const EngineConfig& c) { return std::to_string(c.min_text_hits); }},
        {"table_top",
         [](EngineConfig& c, const std::string& v) { c.table_top = parse_int("table_top", v); },
         [](const EngineConfig& c) { return std::to_string(c.table_top); }},
        {"image_top",
         [](EngineConfig& c, const std::string& v) { c.image_top = parse_int("image_top", v); },
         [](const EngineConfig& c) { return std::to_string(c.image_top); }},
        {"theta_text",
         [](EngineConfig& c, const std::string& v) { c.theta_text = parse_double("theta_text", v); },
         [](const EngineConfig& c) { return fmt_double(c.theta_text); }},
        {"theta_table",
         [](EngineConfig& c, const std::string& v) { c.theta_table = parse_double("theta_table", v); },
         [](const EngineConfig& c) { return fmt_double(c.theta_table); }},
        {"theta_image",
         [](EngineConfig& c, const std::string& v) { c.theta_image = parse_double("theta_image", v); },
         [](const EngineConfig& c) { return fmt_double(c.theta_image); }},
        {"text_hit_cap",
         [](EngineConfig& c, const std::string& v) { c.text_hit_cap = parse_int("text_hit_cap", v); },
         [](const EngineConfig& c) { return std::to_string(c.text_hit_cap); }},
        {"threshold_search_cap",
         [](EngineConfig& c, const std::string& v) {
             c.threshold_search_cap = parse_int("threshold_search_cap", v);
         },
         [](const EngineConfig& c) { return std::to_string(c.threshold_search_cap); }},
        {"embed_dim",
         [](EngineConfig& c, const std::string& v) { c.embed_dim = parse_int("embed_dim", v); },
         [](const EngineConfig& c) { return std::to_string(c.embed_dim); }},
        {"max_context_tokens",
         [](EngineConfig& c, const std::string& v) {
             c.max_context_tokens = parse_int("max_context_tokens", v);
         },
         [](const EngineConfig& c) { return std::to_string(c.max_context_tokens); }},
    };
    return f;
}

} // namespace

std::vector<std::string> validate_config(const EngineConfig& c) {
    std::vector<std::string> errs;
    auto require = [&](bool ok, const std::string& msg) {
        if (!ok)
            errs.push_back(msg);
    };

    require(c.window_size >= 1, "window_size must be >= 1");
    require(c.overlap >= 0, "overlap must be >= 0");
    require(c.overlap < c.window_size, "overlap must be < window_size");
    require(c.breakpoint_percentile > 0.0 && c.breakpoint_percentile < 100.0,
            "breakpoint_percentile must be in (0, 100)");
    require(c.tau_merge >= 0.0 && c.tau_merge <= 1.0, "tau_merge must be in [0, 1]");
    require(c.batch_size >= 1, "batch_size must be >= 1");
    require(c.retry_limit >= 1, "retry_limit must be >= 1");
    require(c.extract_in_flight >= 1, "extract_in_flight must be >= 1");
    require(c.min_text_hits >= 1, "min_text_hits must be >= 1");
    require(c.table_top >= 1, "table_top must be >= 1");
    require(c.image_top >= 1, "image_top must be >= 1");
    require(c.theta_text >= -1.0 && c.theta_text <= 1.0,
            "theta_text must be in [-1, 1]");
    require(c.theta_table >= -1.0 && c.theta_table <= 1.0,
            "theta_table must be in [-1, 1]");
    require(c.theta_image >= -1.0 && c.theta_image <= 1.0,
            "theta_image must be in [-1, 1]");
    require(c.text_hit_cap >= 1, "text_hit_cap must be >= 1");
    require(c.threshold_search_cap >= 1, "threshold_search_cap must be >= 1");
    require(c.embed_dim >= 1, "embed_dim must be >= 1");
    require(c.max_context_tokens >= 1, "max_context_tokens must be >= 1");
    return errs;
}

EngineConfig validated(EngineConfig cfg) {
    auto errs = validate_config(cfg);
    if (!errs.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& e : errs)
            msg += "\n  - " + e;
        throw ConfigError(msg);
    }
    return cfg;
}

void set_config_field(EngineConfig& cfg, const std::string& key,
                      const std::string& value) {
    for (const auto& f : fields()) {
        if (f.name == key) {
            f.set(cfg, value);
            return;
        }
    }
    throw ConfigError("unknown config key: " + key);
}

const std::vector<std::string>& config_field_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const auto& f : fields())
            n.push_back(f.name);
        return n;
    }();
    return names;
}

EngineConfig load_config_file(const std::filesystem::path& path, EngineConfig base) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file: " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos)
            line.resize(hash);
        std::string t = trim(line);
        if (t.empty())
            continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": expected 'key = value'");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        set_config_field(base, key, value);
    }
    return base;
}

EngineConfig apply_env_overrides(EngineConfig cfg) {
    for (const auto& name : config_field_names()) {
        std::string env_name = "FINRAG_";
        for (char ch : name)
            env_name += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        if (const char* v = std::getenv(env_name.c_str()))
            set_config_field(cfg, name, v);
    }
    return cfg;
}

std::string config_to_text(const EngineConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) {
        out += f.name;
        out += " = ";
        out += f.get(cfg);
        out += '\n';
    }
    return out;
}

} // namespace finrag
