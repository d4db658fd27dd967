#pragma once
// Knowledge-base persistence. Layout under one root directory:
//   kb.json                      manifest: format version, config
//                                snapshot, documents, per-modality counts
//   chunks/{text,tables,images}.jsonl   append-only record stores
//   index/{text,table,image}.frix       vector indexes
//   stubs/                       extraction dump directory
//   images/                      cropped region images
// Records are written store-line-first, index-second; the manifest count
// written at finalize() is the commit point, so a crash can only leave
// an orphan JSONL tail, which open() ignores.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "finrag/chunk.hpp"
#include "finrag/config.hpp"
#include "finrag/extract.hpp"
#include "finrag/types.hpp"
#include "finrag/vindex.hpp"

namespace finrag {

inline constexpr int kKbFormatVersion = 1;

struct KbCounts {
    std::size_t text = 0;
    std::size_t tables = 0;
    std::size_t images = 0;
};

struct StoredText {
    ChunkId id;
    std::string content;
    int first_ordinal = 0;
    int last_ordinal = 0;
    std::vector<int> ordinals;
    int token_estimate = 0;
};

struct StoredTable {
    ChunkId id;
    std::string region_id;
    std::string summary;
    std::string structured_json;
};

struct StoredImage {
    ChunkId id;
    std::string region_id;
    std::string summary;
};

// Extraction leftovers recorded in the manifest: regions that ended
// Failed or skipped_non_data are never indexed but stay accounted for.
struct ExtractionLedger {
    std::vector<std::string> failed_tables;
    std::vector<std::string> failed_images;
    std::vector<std::string> skipped_images;
};

class KnowledgeBase {
public:
    // Writer mode on an empty or absent directory; takes the build lock.
    static KnowledgeBase init(const std::filesystem::path& root, EngineConfig config,
                              bool hnsw = true, HnswParams hnsw_params = {});

    // Reader mode on a finalized KB. Verifies layout, format version,
    // store/index bijection; refuses while a build lock is present.
    static KnowledgeBase open(const std::filesystem::path& root);

    KnowledgeBase(KnowledgeBase&&) noexcept = default;
    KnowledgeBase& operator=(KnowledgeBase&&) noexcept = default;

    // Appends: record line first, index entry second. Only Parsed,
    // non-skipped records may be appended (they must carry embeddings).
    ChunkId append_text(const TextChunk& chunk);
    ChunkId append_table(const TableRecord& record);
    ChunkId append_image(const ImageRecord& record);

    void add_document(const std::string& doc_id);
    void record_extraction(const ExtractionLedger& ledger);

    // Writes indexes and the kb.json manifest, then releases the lock.
    void finalize();

    const VectorIndex& text_index() const { return *text_index_; }
    const VectorIndex& table_index() const { return *table_index_; }
    const VectorIndex& image_index() const { return *image_index_; }

    const StoredText* text(const ChunkId& id) const;
    const StoredTable* table(const ChunkId& id) const;
    const StoredImage* image(const ChunkId& id) const;

    const EngineConfig& config() const { return config_; }
    KbCounts counts() const;
    const std::vector<std::string>& documents() const { return documents_; }
    const ExtractionLedger& extraction_ledger() const { return ledger_; }

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path stubs_dir() const { return root_ / "stubs"; }
    std::filesystem::path images_dir() const { return root_ / "images"; }

private:
    KnowledgeBase() = default;

    std::filesystem::path root_;
    EngineConfig config_;
    bool writable_ = false;
    std::vector<std::string> documents_;
    ExtractionLedger ledger_;

    std::unique_ptr<VectorIndex> text_index_;
    std::unique_ptr<VectorIndex> table_index_;
    std::unique_ptr<VectorIndex> image_index_;

    std::map<ChunkId, StoredText> texts_;
    std::map<ChunkId, StoredTable> tables_;
    std::map<ChunkId, StoredImage> images_;
};

// Canonical JSON: sorted keys, no insignificant whitespace, UTF-8.
// Throws InputError when `text` is not valid JSON.
std::string canonical_json(std::string_view text);

} // namespace finrag
