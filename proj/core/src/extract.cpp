#include "finrag/extract.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "finrag/chunk.hpp"

namespace finrag {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string quote_id(const std::string& id) {
    const bool needs_quotes =
        id.find_first_of(" \t\"") != std::string::npos || id.empty();
    if (!needs_quotes)
        return id;
    std::string out = "\"";
    for (char c : id) {
        if (c == '"')
            out += '\\';
        out += c;
    }
    out += '"';
    return out;
}

std::string file_list(std::span<const Region> batch) {
    std::string out;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (i > 0)
            out += ", ";
        out += quote_id(batch[i].id);
    }
    return out;
}

constexpr std::string_view kFilesLinePrefix = "Files in order: ";
constexpr std::string_view kSectionOpen = "<<<FILE ";
constexpr std::string_view kSectionEnd = "<<<END ";
constexpr std::string_view kSectionClose = ">>>";

// Parses one possibly-quoted id starting at `pos`; advances pos past it.
std::string take_id(std::string_view s, std::size_t& pos) {
    if (pos < s.size() && s[pos] == '"') {
        std::string id;
        ++pos;
        while (pos < s.size() && s[pos] != '"') {
            if (s[pos] == '\\' && pos + 1 < s.size())
                ++pos;
            id += s[pos++];
        }
        if (pos < s.size())
            ++pos; // closing quote
        return id;
    }
    std::size_t end = pos;
    while (end < s.size() && s[end] != ',')
        ++end;
    std::string id = trim(s.substr(pos, end - pos));
    pos = end;
    return id;
}

} // namespace

std::string_view extract_status_name(ExtractStatus s) {
    switch (s) {
    case ExtractStatus::Parsed:
        return "parsed";
    case ExtractStatus::Stubbed:
        return "stubbed";
    case ExtractStatus::Failed:
        return "failed";
    }
    return "failed";
}

ExtractStatus parse_extract_status(std::string_view name) {
    if (name == "parsed")
        return ExtractStatus::Parsed;
    if (name == "stubbed")
        return ExtractStatus::Stubbed;
    if (name == "failed")
        return ExtractStatus::Failed;
    throw InputError("unknown extract status: " + std::string(name));
}

RegionManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw InputError("cannot open manifest: " + path.string());

    RegionManifest manifest;
    manifest.provenance = "manifest";
    const auto base_dir = path.parent_path();

    std::set<std::string> seen_ids;
    std::vector<std::string> missing_images;
    std::string line;
    int lineno = 0;

    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        const auto where = path.string() + ":" + std::to_string(lineno);
        json row = json::parse(line, nullptr, false);
        if (row.is_discarded() || !row.is_object())
            throw InputError(where + ": malformed JSON row");

        for (const char* field : {"id", "doc", "page", "kind", "bbox", "image_path"})
            if (!row.contains(field))
                throw InputError(where + ": missing field '" + field + "'");

        Region r;
        try {
            r.id = row["id"].get<std::string>();
            r.doc = row["doc"].get<std::string>();
            r.page = row["page"].get<int>();
            const auto kind = row["kind"].get<std::string>();
            if (kind == "table")
                r.kind = RegionKind::Table;
            else if (kind == "figure")
                r.kind = RegionKind::Figure;
            else
                throw InputError(where + ": kind must be 'table' or 'figure'");
            const auto& bbox = row["bbox"];
            if (!bbox.is_array() || bbox.size() != 4)
                throw InputError(where + ": bbox must be [x0, y0, x1, y1]");
            for (int i = 0; i < 4; ++i)
                r.bbox[static_cast<std::size_t>(i)] = bbox[static_cast<std::size_t>(i)].get<double>();
            r.image_path = row["image_path"].get<std::string>();
        } catch (const json::exception& e) {
            throw InputError(where + ": " + e.what());
        }

        if (r.id.empty())
            throw InputError(where + ": region id must be non-empty");
        if (r.page < 1)
            throw InputError(where + ": page must be >= 1");
        if (!(r.bbox[0] < r.bbox[2]) || !(r.bbox[1] < r.bbox[3]))
            throw InputError(where + ": bbox must satisfy x0 < x1 and y0 < y1");
        if (!seen_ids.insert(r.id).second)
            throw InputError(where + ": duplicate region id '" + r.id + "'");
        if (manifest.regions.empty())
            manifest.doc = r.doc;
        else if (r.doc != manifest.doc)
            throw InputError(where + ": manifest mixes documents '" + manifest.doc +
                             "' and '" + r.doc + "'");
        if (row.contains("provenance"))
            manifest.provenance = row["provenance"].get<std::string>();

        if (r.image_path.is_relative())
            r.image_path = base_dir / r.image_path;
        if (!std::filesystem::exists(r.image_path))
            missing_images.push_back(r.image_path.string());

        manifest.regions.push_back(std::move(r));
    }

    if (!missing_images.empty()) {
        std::string msg = "manifest references missing image files:";
        for (const auto& m : missing_images)
            msg += "\n  - " + m;
        throw InputError(msg);
    }
    return manifest;
}

std::string build_table_prompt(std::span<const Region> batch) {
    if (batch.empty())
        throw InputError("cannot build a prompt for an empty batch");
    std::ostringstream p;
    p << "You will receive " << batch.size()
      << " table image(s) attached in order.\n";
    p << kFilesLinePrefix << file_list(batch) << "\n";
    p << "For every file above, emit exactly one section in this format and no "
         "other text:\n";
    p << "<<<FILE filename>>>\n";
    p << "SUMMARY: a 2-4 sentence description of what the table shows.\n";
    p << "JSON:\n";
    p << "the full table contents as one JSON object\n";
    p << "<<<END filename>>>\n";
    p << "Use each exact filename from the list as its section key, in the same "
         "order as the files. Keep every number exactly as printed.\n";
    return p.str();
}

std::string build_image_prompt(std::span<const Region> batch) {
    if (batch.empty())
        throw InputError("cannot build a prompt for an empty batch");
    std::ostringstream p;
    p << "You will receive " << batch.size()
      << " chart or figure image(s) attached in order.\n";
    p << kFilesLinePrefix << file_list(batch) << "\n";
    p << "For every file above, emit exactly one section in this format and no "
         "other text:\n";
    p << "<<<FILE filename>>>\n";
    p << "SUMMARY: 3 to 6 sentences describing the data shown: chart type, axes, "
         "series, and the key values or trends.\n";
    p << "<<<END filename>>>\n";
    p << "If a file is not a data visual (a logo, watermark, or page decoration), "
         "use the single word "
      << kNonDataSentinel << " as its entire section body.\n";
    p << "Use each exact filename from the list as its section key, in the same "
         "order as the files.\n";
    return p.str();
}

std::vector<std::string> prompt_region_ids(std::string_view prompt) {
    std::vector<std::string> ids;
    std::istringstream in{std::string(prompt)};
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind(kFilesLinePrefix, 0) != 0)
            continue;
        std::string_view rest = std::string_view(line).substr(kFilesLinePrefix.size());
        std::size_t pos = 0;
        while (pos < rest.size()) {
            while (pos < rest.size() && (rest[pos] == ' ' || rest[pos] == ','))
                ++pos;
            if (pos >= rest.size())
                break;
            std::string id = take_id(rest, pos);
            if (!id.empty())
                ids.push_back(std::move(id));
        }
        break;
    }
    return ids;
}

namespace {

// Extracts the section key from a line like "<<<FILE id>>>"; returns
// nullopt when the line is not a section opener for `marker`.
std::optional<std::string> section_key(std::string_view line, std::string_view marker) {
    const std::string t = trim(line);
    std::string_view v = t;
    if (v.rfind(marker, 0) != 0)
        return std::nullopt;
    v.remove_prefix(marker.size());
    if (v.size() < kSectionClose.size() ||
        v.substr(v.size() - kSectionClose.size()) != kSectionClose)
        return std::nullopt;
    v.remove_suffix(kSectionClose.size());
    std::string raw = trim(v);
    if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
        std::string un;
        for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
            if (raw[i] == '\\' && i + 2 < raw.size())
                ++i;
            un += raw[i];
        }
        return un;
    }
    return raw;
}

std::map<std::string, std::string> split_sections(std::string_view raw) {
    std::map<std::string, std::string> sections;
    std::istringstream in{std::string(raw)};
    std::string line;
    std::string current_id;
    std::string body;
    auto flush = [&] {
        if (!current_id.empty() && !sections.count(current_id))
            sections[current_id] = body;
        current_id.clear();
        body.clear();
    };
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (auto open = section_key(line, kSectionOpen)) {
            flush();
            current_id = *open;
            continue;
        }
        if (auto end = section_key(line, kSectionEnd)) {
            if (!current_id.empty() && *end == current_id)
                flush();
            continue;
        }
        if (!current_id.empty()) {
            body += line;
            body += '\n';
        }
    }
    flush();
    return sections;
}

// Strips markdown code fences the model may wrap JSON in.
std::string strip_fences(std::string_view s) {
    std::string out;
    std::istringstream in{std::string(s)};
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.rfind("```", 0) == 0)
            continue;
        out += line;
        out += '\n';
    }
    return out;
}

std::optional<ParsedSection> parse_table_section(const std::string& body) {
    const auto summary_pos = body.find("SUMMARY:");
    const auto json_pos = body.find("JSON:");
    if (summary_pos == std::string::npos || json_pos == std::string::npos ||
        json_pos < summary_pos)
        return std::nullopt;
    ParsedSection s;
    s.summary = trim(body.substr(summary_pos + 8, json_pos - summary_pos - 8));
    if (s.summary.empty())
        return std::nullopt;
    const std::string json_text = strip_fences(body.substr(json_pos + 5));
    json value = json::parse(json_text, nullptr, false);
    if (value.is_discarded() || value.is_null())
        return std::nullopt;
    s.structured_json = value.dump(); // canonical: sorted keys, no whitespace
    return s;
}

std::optional<ParsedSection> parse_image_section(const std::string& body) {
    std::string t = trim(body);
    if (!t.empty() && t.back() == '.')
        t.pop_back();
    if (trim(t) == kNonDataSentinel) {
        ParsedSection s;
        s.non_data = true;
        return s;
    }
    std::string summary = trim(body);
    if (summary.rfind("SUMMARY:", 0) == 0)
        summary = trim(summary.substr(8));
    if (summary.empty())
        return std::nullopt;
    const auto sentences = segment_sentences(summary);
    if (sentences.size() < 3 || sentences.size() > 6)
        return std::nullopt;
    ParsedSection s;
    s.summary = summary;
    return s;
}

} // namespace

BatchParse parse_batch_response(std::span<const Region> batch, std::string_view raw,
                                RegionKind mode) {
    BatchParse out;
    const auto sections = split_sections(raw);
    for (const auto& region : batch) {
        auto it = sections.find(region.id);
        if (it == sections.end()) {
            out.missing.push_back(region.id);
            continue;
        }
        const auto parsed = mode == RegionKind::Table
                                ? parse_table_section(it->second)
                                : parse_image_section(it->second);
        if (!parsed) {
            out.missing.push_back(region.id);
            continue;
        }
        out.parsed.emplace(region.id, *parsed);
    }
    return out;
}

namespace {

std::filesystem::path stub_path(const std::filesystem::path& stub_dir,
                                const std::string& region_id) {
    std::string name;
    for (char c : region_id)
        name += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
    char hash[17];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(region_id)));
    return stub_dir / (name + "-" + hash + ".stub.json");
}

void write_stub(const std::filesystem::path& stub_dir, const std::string& region_id,
                int batch_index, int attempts, const std::string& reason) {
    std::filesystem::create_directories(stub_dir);
    json stub;
    stub["region_id"] = region_id;
    stub["batch_index"] = batch_index;
    stub["attempts"] = attempts;
    stub["reason"] = reason;
    std::ofstream out(stub_path(stub_dir, region_id), std::ios::trunc);
    out << stub.dump() << "\n";
}

struct Outcome {
    ParsedSection section;
    bool ok = false;
    int batch_index = 0;
    int attempts = 0;
    std::string reason;
};

// Shared batched pass + stub/retry fallback for both modalities.
std::vector<Outcome> run_extraction(const std::vector<Region>& regions,
                                    const EngineConfig& config, ChatGateway& gateway,
                                    RegionKind mode,
                                    const std::filesystem::path& stub_dir,
                                    ExtractReport& report) {
    const auto batches = partition_batches(regions, config.batch_size);
    std::vector<BatchParse> batch_results(batches.size());
    std::vector<std::string> batch_failures(batches.size());

    auto build_prompt = [&](std::span<const Region> batch) {
        return mode == RegionKind::Table ? build_table_prompt(batch)
                                         : build_image_prompt(batch);
    };

    auto run_batch = [&](std::size_t bi) {
        const auto& batch = batches[bi];
        ChatRequest req;
        req.user = build_prompt(batch);
        for (const auto& r : batch)
            req.image_paths.push_back(r.image_path);
        try {
            const auto res = gateway.chat(req);
            batch_results[bi] = parse_batch_response(batch, res.text, mode);
        } catch (const std::exception& e) {
            BatchParse all_missing;
            for (const auto& r : batch)
                all_missing.missing.push_back(r.id);
            batch_results[bi] = std::move(all_missing);
            batch_failures[bi] = e.what();
        }
    };

    // Batch calls may run concurrently; results land in slots indexed by
    // batch position, so output order never depends on scheduling.
    const int workers = std::clamp(config.extract_in_flight, 1,
                                   static_cast<int>(std::max<std::size_t>(batches.size(), 1)));
    if (workers <= 1 || batches.size() <= 1) {
        for (std::size_t bi = 0; bi < batches.size(); ++bi)
            run_batch(bi);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                while (true) {
                    const std::size_t bi = next.fetch_add(1);
                    if (bi >= batches.size())
                        return;
                    run_batch(bi);
                }
            });
        for (auto& t : pool)
            t.join();
    }
    report.batch_calls += static_cast<int>(batches.size());

    // Fold batch results into per-region outcomes, manifest order.
    std::vector<Outcome> outcomes(regions.size());
    std::size_t region_index = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        for (const auto& r : batches[bi]) {
            Outcome& o = outcomes[region_index++];
            o.batch_index = static_cast<int>(bi);
            o.attempts = 1;
            auto it = batch_results[bi].parsed.find(r.id);
            if (it != batch_results[bi].parsed.end()) {
                o.section = it->second;
                o.ok = true;
            } else {
                o.reason = batch_failures[bi].empty()
                               ? "missing or invalid in batch response"
                               : batch_failures[bi];
            }
        }
    }

    // Stub + single-region retries, sequential and in manifest order.
    for (std::size_t i = 0; i < regions.size(); ++i) {
        Outcome& o = outcomes[i];
        if (o.ok)
            continue;
        write_stub(stub_dir, regions[i].id, o.batch_index, o.attempts, o.reason);
        report.stubs_written += 1;

        bool resolved = false;
        for (int attempt = 0; attempt < config.retry_limit && !resolved; ++attempt) {
            std::vector<Region> single{regions[i]};
            ChatRequest req;
            req.user = build_prompt(single);
            req.image_paths.push_back(regions[i].image_path);
            o.attempts += 1;
            report.single_calls += 1;
            try {
                const auto res = gateway.chat(req);
                auto parsed = parse_batch_response(single, res.text, mode);
                auto it = parsed.parsed.find(regions[i].id);
                if (it != parsed.parsed.end()) {
                    o.section = it->second;
                    o.ok = true;
                    resolved = true;
                } else {
                    o.reason = "missing or invalid in single-region response";
                }
            } catch (const std::exception& e) {
                o.reason = e.what();
            }
        }

        if (resolved) {
            std::filesystem::remove(stub_path(stub_dir, regions[i].id));
            report.stubs_resolved += 1;
        } else {
            write_stub(stub_dir, regions[i].id, o.batch_index, o.attempts, o.reason);
        }
    }

    return outcomes;
}

} // namespace

std::vector<TableRecord> extract_tables(const RegionManifest& manifest,
                                        const EngineConfig& config, ChatGateway& gateway,
                                        Embedder& embedder,
                                        const std::filesystem::path& stub_dir,
                                        ExtractReport* report) {
    ExtractReport local;
    ExtractReport& rep = report ? *report : local;

    std::vector<Region> regions;
    for (const auto& r : manifest.regions)
        if (r.kind == RegionKind::Table)
            regions.push_back(r);
    rep.regions = static_cast<int>(regions.size());
    if (regions.empty())
        return {};

    auto outcomes = run_extraction(regions, config, gateway, RegionKind::Table,
                                   stub_dir, rep);

    std::vector<TableRecord> records(regions.size());
    std::vector<std::string> to_embed;
    std::vector<std::size_t> embed_slots;
    for (std::size_t i = 0; i < regions.size(); ++i) {
        TableRecord& rec = records[i];
        rec.id = ChunkId{manifest.doc, Modality::Table, static_cast<std::uint32_t>(i)};
        rec.region_id = regions[i].id;
        if (outcomes[i].ok) {
            rec.status = ExtractStatus::Parsed;
            rec.summary = outcomes[i].section.summary;
            rec.structured_json = outcomes[i].section.structured_json;
            to_embed.push_back(rec.summary);
            embed_slots.push_back(i);
            rep.parsed += 1;
        } else {
            rec.status = ExtractStatus::Failed;
            rec.failure_reason = outcomes[i].reason;
            rep.failed += 1;
        }
    }

    const auto vectors = embedder.embed_batch(to_embed);
    for (std::size_t k = 0; k < embed_slots.size(); ++k)
        records[embed_slots[k]].embedding = vectors[k];
    return records;
}

std::vector<ImageRecord> extract_images(const RegionManifest& manifest,
                                        const EngineConfig& config, ChatGateway& gateway,
                                        Embedder& embedder,
                                        const std::filesystem::path& stub_dir,
                                        ExtractReport* report) {
    ExtractReport local;
    ExtractReport& rep = report ? *report : local;

    std::vector<Region> regions;
    for (const auto& r : manifest.regions)
        if (r.kind == RegionKind::Figure)
            regions.push_back(r);
    rep.regions = static_cast<int>(regions.size());
    if (regions.empty())
        return {};

    auto outcomes = run_extraction(regions, config, gateway, RegionKind::Figure,
                                   stub_dir, rep);

    std::vector<ImageRecord> records(regions.size());
    std::vector<std::string> to_embed;
    std::vector<std::size_t> embed_slots;
    for (std::size_t i = 0; i < regions.size(); ++i) {
        ImageRecord& rec = records[i];
        rec.id = ChunkId{manifest.doc, Modality::Image, static_cast<std::uint32_t>(i)};
        rec.region_id = regions[i].id;
        if (outcomes[i].ok) {
            rec.status = ExtractStatus::Parsed;
            if (outcomes[i].section.non_data) {
                rec.skipped_non_data = true;
                rep.skipped_non_data += 1;
            } else {
                rec.summary = outcomes[i].section.summary;
                to_embed.push_back(rec.summary);
                embed_slots.push_back(i);
                rep.parsed += 1;
            }
        } else {
            rec.status = ExtractStatus::Failed;
            rec.failure_reason = outcomes[i].reason;
            rep.failed += 1;
        }
    }

    const auto vectors = embedder.embed_batch(to_embed);
    for (std::size_t k = 0; k < embed_slots.size(); ++k)
        records[embed_slots[k]].embedding = vectors[k];
    return records;
}

ChatResponse OfflineExtractionGateway::chat(const ChatRequest& req) {
    calls_.fetch_add(1);
    const auto ids = prompt_region_ids(req.user);
    const bool table_mode = req.user.find("table image") != std::string::npos;

    std::string out;
    for (const auto& id : ids) {
        out += "<<<FILE " + quote_id(id) + ">>>\n";
        if (table_mode) {
            out += "SUMMARY: Table " + id + " lists reported financial figures. ";
            out += "Values are shown by row and column as printed.\n";
            out += "JSON:\n";
            json value;
            value["table"] = id;
            value["rows"] = json::array();
            out += value.dump() + "\n";
        } else {
            out += "SUMMARY: Figure " + id + " is a data chart. ";
            out += "It plots one series across the reported periods. ";
            out += "The largest value appears at the right edge of the chart.\n";
        }
        out += "<<<END " + quote_id(id) + ">>>\n";
    }
    ChatResponse res;
    res.text = out;
    return res;
}

} // namespace finrag
