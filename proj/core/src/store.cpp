#include "finrag/store.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace finrag {

using nlohmann::json;

namespace {

constexpr const char* kLockFile = ".lock";
constexpr const char* kManifestFile = "kb.json";

struct Layout {
    std::filesystem::path manifest, text_jsonl, tables_jsonl, images_jsonl;
    std::filesystem::path text_frix, table_frix, image_frix;
    std::filesystem::path lock;
};

Layout layout_for(const std::filesystem::path& root) {
    Layout l;
    l.manifest = root / kManifestFile;
    l.text_jsonl = root / "chunks" / "text.jsonl";
    l.tables_jsonl = root / "chunks" / "tables.jsonl";
    l.images_jsonl = root / "chunks" / "images.jsonl";
    l.text_frix = root / "index" / "text.frix";
    l.table_frix = root / "index" / "table.frix";
    l.image_frix = root / "index" / "image.frix";
    l.lock = root / kLockFile;
    return l;
}

void append_line(const std::filesystem::path& path, const std::string& line) {
    std::ofstream out(path, std::ios::app);
    if (!out)
        throw DataError("cannot append to store file: " + path.string());
    out << line << "\n";
    out.flush();
    if (!out)
        throw DataError("write failed, knowledge base is dirty; rebuild advised: " +
                        path.string());
}

json config_to_json(const EngineConfig& cfg) {
    // Reuses the flat key=value form so the snapshot always round-trips
    // through the same parser as config files.
    json obj = json::object();
    std::istringstream in(config_to_text(cfg));
    std::string line;
    while (std::getline(in, line)) {
        auto eq = line.find(" = ");
        if (eq == std::string::npos)
            continue;
        obj[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return obj;
}

EngineConfig config_from_json(const json& obj) {
    EngineConfig cfg;
    for (auto it = obj.begin(); it != obj.end(); ++it)
        set_config_field(cfg, it.key(), it.value().get<std::string>());
    return cfg;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open store file: " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        lines.push_back(line);
    }
    return lines;
}

json parse_row(const std::string& line, const std::filesystem::path& path,
               std::size_t lineno) {
    json row = json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.is_object())
        throw DataError(path.string() + ":" + std::to_string(lineno) +
                        ": malformed record row");
    return row;
}

void check_bijection(const VectorIndex& index,
                     const std::set<ChunkId>& record_ids, const char* what) {
    const auto index_ids = index.ids();
    if (index_ids.size() != record_ids.size())
        throw DataError(std::string("store/index mismatch for ") + what + ": " +
                        std::to_string(index_ids.size()) + " index entries vs " +
                        std::to_string(record_ids.size()) + " records");
    for (const auto& id : index_ids)
        if (!record_ids.count(id))
            throw DataError(std::string("index entry without a stored record: ") +
                            id.str());
}

} // namespace

std::string canonical_json(std::string_view text) {
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded())
        throw InputError("not valid JSON: " + std::string(text.substr(0, 80)));
    return value.dump();
}

KnowledgeBase KnowledgeBase::init(const std::filesystem::path& root, EngineConfig config,
                                  bool hnsw, HnswParams hnsw_params) {
    config = validated(std::move(config));

    if (std::filesystem::exists(root)) {
        if (!std::filesystem::is_directory(root))
            throw DataError("knowledge base root is not a directory: " + root.string());
        if (!std::filesystem::is_empty(root))
            throw DataError("knowledge base root is not empty: " + root.string());
    }

    const Layout l = layout_for(root);
    std::filesystem::create_directories(root / "chunks");
    std::filesystem::create_directories(root / "index");
    std::filesystem::create_directories(root / "stubs");
    std::filesystem::create_directories(root / "images");

    {
        std::ofstream lock(l.lock, std::ios::trunc);
        lock << "building\n";
    }
    // Touch the stores so an interrupted empty build is still diagnosable.
    for (const auto& p : {l.text_jsonl, l.tables_jsonl, l.images_jsonl})
        std::ofstream(p, std::ios::app);

    KnowledgeBase kb;
    kb.root_ = root;
    kb.config_ = config;
    kb.writable_ = true;
    auto make = [&]() -> std::unique_ptr<VectorIndex> {
        if (hnsw)
            return make_hnsw_index(config.embed_dim, hnsw_params);
        return make_flat_index(config.embed_dim);
    };
    kb.text_index_ = make();
    kb.table_index_ = make();
    kb.image_index_ = make();
    return kb;
}

ChunkId KnowledgeBase::append_text(const TextChunk& chunk) {
    if (!writable_)
        throw DataError("knowledge base is not open for writing");
    if (!chunk.embedding)
        throw InputError("text chunk must be embedded before appending");
    if (chunk.id.doc.empty() || chunk.id.doc.find('/') != std::string::npos)
        throw InputError("chunk id needs a non-empty doc without '/': " +
                         chunk.id.str());

    StoredText rec;
    rec.id = chunk.id;
    rec.content = chunk.content;
    rec.first_ordinal = chunk.sentence_range.first;
    rec.last_ordinal = chunk.sentence_range.second;
    rec.ordinals = chunk.ordinals();
    rec.token_estimate = chunk.token_estimate;

    json row;
    row["id"] = rec.id.str();
    row["content"] = rec.content;
    row["first"] = rec.first_ordinal;
    row["last"] = rec.last_ordinal;
    row["ordinals"] = rec.ordinals;
    row["tokens"] = rec.token_estimate;
    append_line(layout_for(root_).text_jsonl, row.dump());

    text_index_->insert({rec.id, *chunk.embedding, {}});
    texts_.emplace(rec.id, std::move(rec));
    return chunk.id;
}

ChunkId KnowledgeBase::append_table(const TableRecord& record) {
    if (!writable_)
        throw DataError("knowledge base is not open for writing");
    if (record.status != ExtractStatus::Parsed)
        throw InputError("only parsed table records are stored: " + record.id.str());
    if (!record.embedding)
        throw InputError("table record must be embedded before appending");

    StoredTable rec;
    rec.id = record.id;
    rec.region_id = record.region_id;
    rec.summary = record.summary;
    rec.structured_json = canonical_json(record.structured_json);

    json row;
    row["id"] = rec.id.str();
    row["region"] = rec.region_id;
    row["summary"] = rec.summary;
    row["structured"] = json::parse(rec.structured_json);
    append_line(layout_for(root_).tables_jsonl, row.dump());

    table_index_->insert({rec.id, *record.embedding, {}});
    tables_.emplace(rec.id, std::move(rec));
    return record.id;
}

ChunkId KnowledgeBase::append_image(const ImageRecord& record) {
    if (!writable_)
        throw DataError("knowledge base is not open for writing");
    if (record.status != ExtractStatus::Parsed || record.skipped_non_data)
        throw InputError("only parsed data-visual image records are stored: " +
                         record.id.str());
    if (!record.embedding)
        throw InputError("image record must be embedded before appending");

    StoredImage rec;
    rec.id = record.id;
    rec.region_id = record.region_id;
    rec.summary = record.summary;

    json row;
    row["id"] = rec.id.str();
    row["region"] = rec.region_id;
    row["summary"] = rec.summary;
    append_line(layout_for(root_).images_jsonl, row.dump());

    image_index_->insert({rec.id, *record.embedding, {}});
    images_.emplace(rec.id, std::move(rec));
    return record.id;
}

void KnowledgeBase::add_document(const std::string& doc_id) {
    for (const auto& d : documents_)
        if (d == doc_id)
            return;
    documents_.push_back(doc_id);
}

void KnowledgeBase::record_extraction(const ExtractionLedger& ledger) {
    ledger_.failed_tables.insert(ledger_.failed_tables.end(),
                                 ledger.failed_tables.begin(),
                                 ledger.failed_tables.end());
    ledger_.failed_images.insert(ledger_.failed_images.end(),
                                 ledger.failed_images.begin(),
                                 ledger.failed_images.end());
    ledger_.skipped_images.insert(ledger_.skipped_images.end(),
                                  ledger.skipped_images.begin(),
                                  ledger.skipped_images.end());
}

void KnowledgeBase::finalize() {
    if (!writable_)
        throw DataError("knowledge base is not open for writing");
    const Layout l = layout_for(root_);

    text_index_->save(l.text_frix);
    table_index_->save(l.table_frix);
    image_index_->save(l.image_frix);

    json manifest;
    manifest["format_version"] = kKbFormatVersion;
    manifest["config"] = config_to_json(config_);
    manifest["documents"] = documents_;
    manifest["counts"] = {{"text", texts_.size()},
                          {"tables", tables_.size()},
                          {"images", images_.size()}};
    manifest["extraction"] = {{"failed_tables", ledger_.failed_tables},
                              {"failed_images", ledger_.failed_images},
                              {"skipped_images", ledger_.skipped_images}};

    std::ofstream out(l.manifest, std::ios::trunc);
    if (!out)
        throw DataError("cannot write manifest: " + l.manifest.string());
    out << manifest.dump(2) << "\n";
    out.flush();
    if (!out)
        throw DataError("manifest write failed: " + l.manifest.string());

    std::filesystem::remove(l.lock);
    writable_ = false;
}

KnowledgeBase KnowledgeBase::open(const std::filesystem::path& root) {
    const Layout l = layout_for(root);

    if (std::filesystem::exists(l.lock))
        throw DataError("knowledge base is being built (lock file present): " +
                        l.lock.string());

    std::vector<std::string> missing;
    for (const auto& p : {l.manifest, l.text_jsonl, l.tables_jsonl, l.images_jsonl,
                          l.text_frix, l.table_frix, l.image_frix})
        if (!std::filesystem::exists(p))
            missing.push_back(p.string());
    if (!missing.empty()) {
        std::string msg = "knowledge base at " + root.string() +
                          " is missing artifacts:";
        for (const auto& m : missing)
            msg += "\n  - " + m;
        throw DataError(msg);
    }

    std::ifstream in(l.manifest);
    json manifest = json::parse(in, nullptr, false);
    if (manifest.is_discarded() || !manifest.is_object())
        throw DataError("malformed manifest: " + l.manifest.string());
    const int version = manifest.value("format_version", -1);
    if (version != kKbFormatVersion)
        throw DataError("knowledge base format version " + std::to_string(version) +
                        " needs upgrading; this build reads version " +
                        std::to_string(kKbFormatVersion));

    KnowledgeBase kb;
    kb.root_ = root;
    kb.writable_ = false;
    kb.config_ = validated(config_from_json(manifest["config"]));
    if (manifest.contains("documents"))
        kb.documents_ = manifest["documents"].get<std::vector<std::string>>();
    if (manifest.contains("extraction")) {
        const auto& ex = manifest["extraction"];
        kb.ledger_.failed_tables =
            ex.value("failed_tables", std::vector<std::string>{});
        kb.ledger_.failed_images =
            ex.value("failed_images", std::vector<std::string>{});
        kb.ledger_.skipped_images =
            ex.value("skipped_images", std::vector<std::string>{});
    }

    kb.text_index_ = load_index(l.text_frix);
    kb.table_index_ = load_index(l.table_frix);
    kb.image_index_ = load_index(l.image_frix);

    const auto counts = manifest["counts"];
    const auto expect_text = counts.value("text", std::size_t{0});
    const auto expect_tables = counts.value("tables", std::size_t{0});
    const auto expect_images = counts.value("images", std::size_t{0});

    // Lines past the manifest count are an uncommitted tail from an
    // interrupted build; they are hidden, not an error.
    auto load_store = [&](const std::filesystem::path& path, std::size_t expected,
                          auto&& consume) {
        const auto lines = read_lines(path);
        if (lines.size() < expected)
            throw DataError(path.string() + ": expected " + std::to_string(expected) +
                            " records, found " + std::to_string(lines.size()));
        for (std::size_t i = 0; i < expected; ++i)
            consume(parse_row(lines[i], path, i + 1));
    };

    load_store(l.text_jsonl, expect_text, [&](const json& row) {
        StoredText rec;
        rec.id = ChunkId::parse(row.at("id").get<std::string>());
        rec.content = row.at("content").get<std::string>();
        rec.first_ordinal = row.at("first").get<int>();
        rec.last_ordinal = row.at("last").get<int>();
        rec.ordinals = row.at("ordinals").get<std::vector<int>>();
        rec.token_estimate = row.at("tokens").get<int>();
        kb.texts_.emplace(rec.id, std::move(rec));
    });
    load_store(l.tables_jsonl, expect_tables, [&](const json& row) {
        StoredTable rec;
        rec.id = ChunkId::parse(row.at("id").get<std::string>());
        rec.region_id = row.at("region").get<std::string>();
        rec.summary = row.at("summary").get<std::string>();
        rec.structured_json = row.at("structured").dump();
        kb.tables_.emplace(rec.id, std::move(rec));
    });
    load_store(l.images_jsonl, expect_images, [&](const json& row) {
        StoredImage rec;
        rec.id = ChunkId::parse(row.at("id").get<std::string>());
        rec.region_id = row.at("region").get<std::string>();
        rec.summary = row.at("summary").get<std::string>();
        kb.images_.emplace(rec.id, std::move(rec));
    });

    auto key_set = [](const auto& m) {
        std::set<ChunkId> s;
        for (const auto& [id, rec] : m)
            s.insert(id);
        return s;
    };
    check_bijection(*kb.text_index_, key_set(kb.texts_), "text");
    check_bijection(*kb.table_index_, key_set(kb.tables_), "tables");
    check_bijection(*kb.image_index_, key_set(kb.images_), "images");

    return kb;
}

const StoredText* KnowledgeBase::text(const ChunkId& id) const {
    auto it = texts_.find(id);
    return it == texts_.end() ? nullptr : &it->second;
}

const StoredTable* KnowledgeBase::table(const ChunkId& id) const {
    auto it = tables_.find(id);
    return it == tables_.end() ? nullptr : &it->second;
}

const StoredImage* KnowledgeBase::image(const ChunkId& id) const {
    auto it = images_.find(id);
    return it == images_.end() ? nullptr : &it->second;
}

KbCounts KnowledgeBase::counts() const {
    return {texts_.size(), tables_.size(), images_.size()};
}

} // namespace finrag
