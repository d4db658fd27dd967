#pragma once
// Table/figure extraction: region manifests, batching into ceil(N/B)
// groups, multimodal prompt construction with exact filename<->output
// alignment, total-function response parsing, and the stub +
// single-region retry fallback that accounts for every region.

#include <array>
#include <atomic>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "finrag/config.hpp"
#include "finrag/embedder.hpp"
#include "finrag/gateway.hpp"
#include "finrag/types.hpp"

namespace finrag {

enum class RegionKind { Table, Figure };

struct Region {
    std::string id; // doubles as the image filename stem
    std::string doc;
    int page = 1;
    RegionKind kind = RegionKind::Table;
    std::array<double, 4> bbox{0, 0, 0, 0}; // x0, y0, x1, y1 in page points
    std::filesystem::path image_path;
};

struct RegionManifest {
    std::string doc;
    std::vector<Region> regions;
    std::string provenance; // which detector produced it
};

enum class ExtractStatus { Parsed, Stubbed, Failed };

std::string_view extract_status_name(ExtractStatus s);
ExtractStatus parse_extract_status(std::string_view name);

struct TableRecord {
    ChunkId id;
    std::string region_id;
    std::string summary;
    std::string structured_json; // canonical form (sorted keys, no whitespace)
    std::optional<EmbeddingVector> embedding; // of the summary text only
    ExtractStatus status = ExtractStatus::Stubbed;
    std::string failure_reason;
};

struct ImageRecord {
    ChunkId id;
    std::string region_id;
    std::string summary; // 3-6 sentences, or empty when skipped_non_data
    std::optional<EmbeddingVector> embedding;
    ExtractStatus status = ExtractStatus::Stubbed;
    bool skipped_non_data = false;
    std::string failure_reason;
};

// Literal reply marking a figure as a logo/watermark/decoration; such
// records are excluded from the image index.
inline constexpr std::string_view kNonDataSentinel = "NON_DATA_VISUAL";

// JSONL manifest, one region per line:
//   {"id", "doc", "page", "kind", "bbox", "image_path"}
// Malformed rows fail with their line number; every missing image file
// is listed in one error.
RegionManifest load_manifest(const std::filesystem::path& path);

// ceil(N/B) batches; all but the last have size exactly B; input order
// preserved.
template <typename T>
std::vector<std::vector<T>> partition_batches(const std::vector<T>& items, int batch_size) {
    if (batch_size < 1)
        throw ConfigError("batch_size must be >= 1");
    std::vector<std::vector<T>> batches;
    for (std::size_t off = 0; off < items.size();
         off += static_cast<std::size_t>(batch_size)) {
        const std::size_t n =
            std::min(items.size() - off, static_cast<std::size_t>(batch_size));
        batches.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(off),
                             items.begin() + static_cast<std::ptrdiff_t>(off + n));
    }
    return batches;
}

// Prompts enumerate each region id verbatim (quoted when it contains
// whitespace) and demand one fenced section per filename:
//   <<<FILE id>>> ... <<<END id>>>
std::string build_table_prompt(std::span<const Region> batch);
std::string build_image_prompt(std::span<const Region> batch);

// The filename list from one of our own prompts, in order. Used by
// scripted/offline gateways to answer with correctly keyed sections.
std::vector<std::string> prompt_region_ids(std::string_view prompt);

struct ParsedSection {
    std::string summary;
    std::string structured_json; // canonical; empty for images
    bool non_data = false;
};

struct BatchParse {
    std::map<std::string, ParsedSection> parsed; // keyed by region id
    std::vector<std::string> missing;            // absent or invalid, batch order
};

// Total function: never throws on malformed model output. Output keyed
// only by ids present in `batch`; sections for foreign ids are ignored.
// Table mode demands a non-empty summary plus valid JSON; image mode
// demands a 3-6 sentence summary or the NON_DATA_VISUAL sentinel.
BatchParse parse_batch_response(std::span<const Region> batch, std::string_view raw,
                                RegionKind mode);

struct ExtractReport {
    int regions = 0;
    int parsed = 0;
    int failed = 0;
    int skipped_non_data = 0;
    int batch_calls = 0;
    int single_calls = 0;
    int stubs_written = 0;
    int stubs_resolved = 0;
};

// Batched pass + stub/retry fallback. Every region ends Parsed or Failed
// (images may additionally end skipped_non_data); missing ids get a stub
// file in stub_dir before their single-region retries, removed again on
// success. Parsed records carry embeddings of their summaries.
std::vector<TableRecord> extract_tables(const RegionManifest& manifest,
                                        const EngineConfig& config, ChatGateway& gateway,
                                        Embedder& embedder,
                                        const std::filesystem::path& stub_dir,
                                        ExtractReport* report = nullptr);

std::vector<ImageRecord> extract_images(const RegionManifest& manifest,
                                        const EngineConfig& config, ChatGateway& gateway,
                                        Embedder& embedder,
                                        const std::filesystem::path& stub_dir,
                                        ExtractReport* report = nullptr);

// Offline stand-in for the multimodal model: parses the filename list
// out of our own prompt and answers every file with a deterministic,
// well-formed section derived from its id. Used by `ingest --offline`.
class OfflineExtractionGateway final : public ChatGateway {
public:
    ChatResponse chat(const ChatRequest& req) override;
    int calls() const override { return calls_.load(); }

private:
    std::atomic<int> calls_{0};
};

} // namespace finrag
