#pragma once
// EngineConfig: every tunable of the engine in one validated record.
// Loads from a flat key=value file, then FINRAG_* environment overrides,
// then CLI flags (applied by the CLI layer), in that precedence order.

#include <filesystem>
#include <string>
#include <vector>

#include "finrag/errors.hpp"

namespace finrag {

struct EngineConfig {
    // Semantic chunking.
    int window_size = 8;  // w, sentences per sliding block
    int overlap = 2;      // o, sentences shared between consecutive blocks
    double breakpoint_percentile = 95.0; // split where d_j exceeds this percentile
    double tau_merge = 0.85;             // greedy chunk-merge similarity threshold
    bool global_breakpoints = false;     // percentile over the whole document
                                         // instead of per block

    // Extraction.
    int batch_size = 5; // B, regions per multimodal LLM call
    int retry_limit = 2;
    int extract_in_flight = 2; // concurrent batch calls during extraction

    // Tiered retrieval.
    int min_text_hits = 6; // n
    int table_top = 4;     // m
    int image_top = 3;     // p
    double theta_text = 0.70;
    double theta_table = 0.65;
    double theta_image = 0.55;
    int text_hit_cap = 24;        // cap on |T| fed into the text-only prompt
    int threshold_search_cap = 64; // default cap for thresholded index search

    // Embeddings and context budget.
    int embed_dim = 384;
    int max_context_tokens = 8192;

    bool operator==(const EngineConfig&) const = default;
};

// Returns one message per violated invariant; empty when the config is
// valid. Every violation names the field and the violated bound.
std::vector<std::string> validate_config(const EngineConfig& cfg);

// Returns cfg unchanged iff valid, otherwise throws ConfigError listing
// every violation.
EngineConfig validated(EngineConfig cfg);

// Flat `key = value` file; '#' starts a comment. Unknown keys are
// rejected so typos surface early.
EngineConfig load_config_file(const std::filesystem::path& path,
                              EngineConfig base = {});

// Applies FINRAG_<UPPER_FIELD_NAME> environment overrides, e.g.
// FINRAG_THETA_TEXT=0.8. Returns the updated config (not validated).
EngineConfig apply_env_overrides(EngineConfig cfg);

// Key/value assignment used by file loading, env overrides and CLI
// plumbing. Throws ConfigError on unknown key or unparsable value.
void set_config_field(EngineConfig& cfg, const std::string& key,
                      const std::string& value);

// All recognized field names, in declaration order.
const std::vector<std::string>& config_field_names();

// Serializes to the same flat key=value text accepted by
// load_config_file.
std::string config_to_text(const EngineConfig& cfg);

} // namespace finrag
