// finrag: build, query, calibrate and evaluate multimodal knowledge
// bases over financial documents.
//
// Exit codes: 0 success, 1 usage/config error, 2 data/KB error,
// 3 gateway/transport error.

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "finrag/calibrate.hpp"
#include "finrag/chunk.hpp"
#include "finrag/config.hpp"
#include "finrag/embedder.hpp"
#include "finrag/eval.hpp"
#include "finrag/extract.hpp"
#include "finrag/gateway.hpp"
#include "finrag/retrieve.hpp"
#include "finrag/store.hpp"

namespace {

using namespace finrag;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw InputError("cannot open file: " + path.string());
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
}

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : fallback;
}

// Shared connection/model flags and the config override plumbing.
struct CommonOpts {
    std::string config_file;
    std::vector<std::string> overrides; // key=value, applied last
    bool offline = false;
    std::string gateway_script;
    std::string embed_url;
    std::string llm_url;
    std::string llm_model;
    bool json_output = false;
};

void add_common_flags(CLI::App* cmd, CommonOpts& opts, bool with_gateway) {
    cmd->add_option("--config", opts.config_file, "Engine config file (key = value)");
    cmd->add_option("--set", opts.overrides,
                    "Override one config key, e.g. --set theta_text=0.8")
        ->type_name("KEY=VALUE");
    cmd->add_flag("--offline", opts.offline,
                  "Deterministic test embedder and scripted gateway; no network");
    cmd->add_option("--embed-url", opts.embed_url,
                    "Embedding server URL (default $FINRAG_EMBED_URL)");
    cmd->add_flag("--json", opts.json_output, "Machine-readable JSON output");
    if (with_gateway) {
        cmd->add_option("--gateway-script", opts.gateway_script,
                        "JSONL substring-rule script for the mock gateway");
        cmd->add_option("--llm-url", opts.llm_url,
                        "Model server URL (default $FINRAG_LLM_URL)");
        cmd->add_option("--llm-model", opts.llm_model,
                        "Model name (default $FINRAG_LLM_MODEL)");
    }
}

EngineConfig assemble_config(const CommonOpts& opts) {
    EngineConfig cfg;
    if (!opts.config_file.empty())
        cfg = load_config_file(opts.config_file, cfg);
    cfg = apply_env_overrides(cfg);
    for (const auto& kv : opts.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
        set_config_field(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return validated(cfg);
}

// Query-time overrides applied on top of a KB's config snapshot.
EngineConfig overlay_config(EngineConfig cfg, const CommonOpts& opts) {
    cfg = apply_env_overrides(cfg);
    for (const auto& kv : opts.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
        set_config_field(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return validated(cfg);
}

std::unique_ptr<Embedder> make_cli_embedder(const CommonOpts& opts,
                                            const EngineConfig& cfg) {
    EmbedderSpec spec;
    spec.dimension = cfg.embed_dim;
    if (opts.offline) {
        spec.kind = EmbedderSpec::Kind::DeterministicTest;
        return make_embedder(spec);
    }
    spec.kind = EmbedderSpec::Kind::Remote;
    spec.endpoint_url = !opts.embed_url.empty() ? opts.embed_url
                                                : env_or("FINRAG_EMBED_URL", "");
    spec.retry_limit = cfg.retry_limit;
    if (spec.endpoint_url.empty())
        throw ConfigError("no embedding backend: pass --offline, --embed-url, or set "
                          "FINRAG_EMBED_URL");
    return make_embedder(spec);
}

std::unique_ptr<ChatGateway> make_cli_gateway(const CommonOpts& opts,
                                              const EngineConfig& cfg,
                                              bool for_extraction) {
    if (!opts.gateway_script.empty())
        return std::make_unique<ScriptedGateway>(
            std::filesystem::path(opts.gateway_script));
    if (opts.offline) {
        if (for_extraction)
            return std::make_unique<OfflineExtractionGateway>();
        return std::make_unique<ScriptedGateway>();
    }
    const std::string url =
        !opts.llm_url.empty() ? opts.llm_url : env_or("FINRAG_LLM_URL", "");
    if (url.empty())
        throw ConfigError("no model gateway: pass --offline, --gateway-script, "
                          "--llm-url, or set FINRAG_LLM_URL");
    const std::string model =
        !opts.llm_model.empty() ? opts.llm_model : env_or("FINRAG_LLM_MODEL", "local");
    GatewayOptions gw;
    gw.max_images = cfg.batch_size;
    gw.retry_limit = cfg.retry_limit;
    return make_http_gateway(url, model, gw);
}

// ------------------------------------------------------------------ ingest

struct IngestOpts {
    CommonOpts common;
    std::string doc_path;
    std::string manifest_path;
    std::string kb_dir;
    std::string doc_id;
    std::string index_kind = "hnsw";
};

int run_ingest(const IngestOpts& opts) {
    const EngineConfig cfg = assemble_config(opts.common);
    auto embedder = make_cli_embedder(opts.common, cfg);

    const std::string doc_text = read_text_file(opts.doc_path);
    std::string doc_id = opts.doc_id;
    if (doc_id.empty())
        doc_id = std::filesystem::path(opts.doc_path).stem().string();
    if (doc_id.empty() || doc_id.find('/') != std::string::npos)
        throw InputError("document id must be non-empty and contain no '/'");

    auto kb = KnowledgeBase::init(opts.kb_dir, cfg, opts.index_kind == "hnsw");
    kb.add_document(doc_id);

    json out;
    std::ostringstream text_report;

    auto t0 = Clock::now();
    const auto chunking = chunk_document(doc_text, cfg, *embedder, doc_id);
    for (const auto& c : chunking.chunks)
        kb.append_text(c);
    const double chunk_ms = ms_since(t0);
    {
        std::ostringstream line;
        line << "chunk      " << chunking.chunks.size() << " chunks ("
             << chunking.premerge_chunk_count << " pre-merge), reduction "
             << chunking.reduction_ratio;
        text_report << line.str() << " (" << chunk_ms << " ms)\n";
        out["chunks"] = {{"count", chunking.chunks.size()},
                         {"premerge_count", chunking.premerge_chunk_count},
                         {"reduction_ratio", chunking.reduction_ratio},
                         {"merges", chunking.merge.merges}};
    }

    ExtractionLedger ledger;
    if (!opts.manifest_path.empty()) {
        const auto manifest = load_manifest(opts.manifest_path);
        auto gateway = make_cli_gateway(opts.common, cfg, /*for_extraction=*/true);

        t0 = Clock::now();
        ExtractReport table_report;
        const auto tables = extract_tables(manifest, cfg, *gateway, *embedder,
                                           kb.stubs_dir(), &table_report);
        for (const auto& rec : tables) {
            if (rec.status == ExtractStatus::Parsed)
                kb.append_table(rec);
            else
                ledger.failed_tables.push_back(rec.region_id);
        }
        const double tables_ms = ms_since(t0);
        text_report << "tables     coverage " << table_report.parsed << "/"
                    << table_report.regions << ", stubs resolved "
                    << table_report.stubs_resolved << ", failed "
                    << table_report.failed << " (" << tables_ms << " ms)\n";
        out["tables"] = {{"regions", table_report.regions},
                         {"parsed", table_report.parsed},
                         {"failed", table_report.failed},
                         {"stubs_written", table_report.stubs_written},
                         {"stubs_resolved", table_report.stubs_resolved}};

        t0 = Clock::now();
        ExtractReport image_report;
        const auto images = extract_images(manifest, cfg, *gateway, *embedder,
                                           kb.stubs_dir(), &image_report);
        for (const auto& rec : images) {
            if (rec.status == ExtractStatus::Parsed && !rec.skipped_non_data)
                kb.append_image(rec);
            else if (rec.skipped_non_data)
                ledger.skipped_images.push_back(rec.region_id);
            else
                ledger.failed_images.push_back(rec.region_id);
        }
        const double images_ms = ms_since(t0);
        text_report << "images     coverage "
                    << (image_report.parsed + image_report.skipped_non_data) << "/"
                    << image_report.regions << " (" << image_report.parsed
                    << " parsed, " << image_report.skipped_non_data
                    << " non-data skipped), stubs resolved "
                    << image_report.stubs_resolved << ", failed "
                    << image_report.failed << " (" << images_ms << " ms)\n";
        out["images"] = {{"regions", image_report.regions},
                         {"parsed", image_report.parsed},
                         {"skipped_non_data", image_report.skipped_non_data},
                         {"failed", image_report.failed},
                         {"stubs_written", image_report.stubs_written},
                         {"stubs_resolved", image_report.stubs_resolved}};
    }

    kb.record_extraction(ledger);
    t0 = Clock::now();
    kb.finalize();
    const double store_ms = ms_since(t0);

    const auto counts = kb.counts();
    text_report << "store      text " << counts.text << ", tables " << counts.tables
                << ", images " << counts.images << " (" << store_ms << " ms)\n";
    out["counts"] = {{"text", counts.text},
                     {"tables", counts.tables},
                     {"images", counts.images}};

    if (opts.common.json_output)
        std::cout << out.dump(2) << "\n";
    else
        std::cout << text_report.str();
    return 0;
}

// ------------------------------------------------------------------- query

struct QueryOpts {
    CommonOpts common;
    std::string kb_dir;
    std::string question;
    bool repl = false;
    std::string trace_path;
};

int answer_once(const QueryOpts& opts, const KnowledgeBase& kb,
                const EngineConfig& cfg, Embedder& embedder, ChatGateway& gateway,
                const std::string& question) {
    const auto t0 = Clock::now();
    Query q = make_query(question, cfg, embedder);
    const double embed_ms = ms_since(t0);

    Answer a = answer(q, kb, gateway);
    a.trace.timings.embed_ms = embed_ms;

    if (!opts.trace_path.empty()) {
        std::ofstream trace_out(opts.trace_path, std::ios::trunc);
        if (!trace_out)
            throw InputError("cannot write trace file: " + opts.trace_path);
        trace_out << a.trace.to_json(false).dump(2) << "\n";
    }

    if (opts.common.json_output) {
        json out;
        out["answer"] = a.text;
        out["insufficient"] = a.insufficient;
        out["tier"] = std::string(tier_name(a.trace.tier));
        out["trace"] = a.trace.to_json(false);
        std::cout << out.dump(2) << "\n";
    } else {
        std::cout << "tier: " << tier_name(a.trace.tier) << "\n";
        std::cout << "text hits: " << a.trace.text_hits.size()
                  << ", table hits: " << a.trace.table_hits.size()
                  << ", image hits: " << a.trace.image_hits.size() << "\n";
        const auto& t = a.trace.timings;
        std::cout << "timings ms: embed " << t.embed_ms << ", text " << t.text_search_ms
                  << ", fallback " << t.fallback_ms << ", assemble " << t.assemble_ms
                  << ", gateway " << t.gateway_ms << "\n";
        std::cout << "answer: " << a.text << "\n";
    }
    return 0;
}

int run_query(const QueryOpts& opts) {
    auto kb = KnowledgeBase::open(opts.kb_dir);
    const EngineConfig cfg = overlay_config(kb.config(), opts.common);
    auto embedder = make_cli_embedder(opts.common, cfg);
    auto gateway = make_cli_gateway(opts.common, cfg, /*for_extraction=*/false);

    if (opts.repl) {
        std::string line;
        while (std::getline(std::cin, line)) {
            if (line.empty())
                continue;
            if (line == "exit" || line == "quit")
                break;
            answer_once(opts, kb, cfg, *embedder, *gateway, line);
        }
        return 0;
    }
    return answer_once(opts, kb, cfg, *embedder, *gateway, opts.question);
}

// --------------------------------------------------------------- calibrate

struct CalibrateOpts {
    CommonOpts common;
    std::string kb_dir;
    std::string dev_path;
    std::string out_csv;
    std::string summary_path;
    double budget = 0; // 0: use max_context_tokens
};

int run_calibrate(const CalibrateOpts& opts) {
    auto kb = KnowledgeBase::open(opts.kb_dir);
    const EngineConfig cfg = overlay_config(kb.config(), opts.common);
    auto embedder = make_cli_embedder(opts.common, cfg);

    const auto dev = load_dev_set(opts.dev_path);
    CalibrationOptions copts;
    copts.budget_tokens =
        opts.budget > 0 ? opts.budget : static_cast<double>(cfg.max_context_tokens);

    const auto run = run_calibration(dev, kb, *embedder, copts);
    write_points_csv(opts.out_csv, run);

    json summary;
    summary["selected"] = {{"theta_text", run.selected[0]},
                           {"theta_table", run.selected[1]},
                           {"theta_image", run.selected[2]}};
    summary["text_points"] = run.text_points.size();
    summary["pair_points"] = run.pair_points.size();
    summary["csv"] = opts.out_csv;
    if (!opts.summary_path.empty()) {
        std::ofstream out(opts.summary_path, std::ios::trunc);
        if (!out)
            throw InputError("cannot write summary: " + opts.summary_path);
        out << summary.dump(2) << "\n";
    }

    if (opts.common.json_output) {
        std::cout << summary.dump(2) << "\n";
    } else {
        std::cout << "points: " << run.text_points.size() << " text + "
                  << run.pair_points.size() << " table/image -> " << opts.out_csv
                  << "\n";
        std::cout << "selected thresholds: theta_text " << run.selected[0]
                  << ", theta_table " << run.selected[1] << ", theta_image "
                  << run.selected[2] << "\n";
    }
    return 0;
}

// ------------------------------------------------------------------- stats

int run_stats(const std::string& kb_dir, bool json_output) {
    auto kb = KnowledgeBase::open(kb_dir);
    const auto counts = kb.counts();

    auto file_size = [&](const char* rel) -> std::uintmax_t {
        std::error_code ec;
        const auto s = std::filesystem::file_size(kb.root() / rel, ec);
        return ec ? 0 : s;
    };

    if (json_output) {
        json out;
        out["counts"] = {{"text", counts.text},
                         {"tables", counts.tables},
                         {"images", counts.images}};
        out["index_bytes"] = {{"text", file_size("index/text.frix")},
                              {"table", file_size("index/table.frix")},
                              {"image", file_size("index/image.frix")}};
        out["documents"] = kb.documents();
        const auto& lg = kb.extraction_ledger();
        out["extraction"] = {{"failed_tables", lg.failed_tables},
                             {"failed_images", lg.failed_images},
                             {"skipped_images", lg.skipped_images}};
        json cfg_obj = json::object();
        std::istringstream cfg_text(config_to_text(kb.config()));
        std::string line;
        while (std::getline(cfg_text, line)) {
            const auto eq = line.find(" = ");
            if (eq != std::string::npos)
                cfg_obj[line.substr(0, eq)] = line.substr(eq + 3);
        }
        out["config"] = cfg_obj;
        std::cout << out.dump(2) << "\n";
    } else {
        std::cout << "documents: ";
        for (std::size_t i = 0; i < kb.documents().size(); ++i)
            std::cout << (i ? ", " : "") << kb.documents()[i];
        std::cout << "\n";
        std::cout << "text chunks:   " << counts.text << " ("
                  << file_size("index/text.frix") << " index bytes)\n";
        std::cout << "table records: " << counts.tables << " ("
                  << file_size("index/table.frix") << " index bytes)\n";
        std::cout << "image records: " << counts.images << " ("
                  << file_size("index/image.frix") << " index bytes)\n";
        const auto& lg = kb.extraction_ledger();
        std::cout << "extraction: " << lg.failed_tables.size() << " failed tables, "
                  << lg.failed_images.size() << " failed images, "
                  << lg.skipped_images.size() << " non-data skipped\n";
        std::cout << "config:\n" << config_to_text(kb.config());
    }
    return 0;
}

// -------------------------------------------------------------------- eval

struct EvalOpts {
    CommonOpts common;
    std::string kb_dir;
    std::string qa_path;
};

int run_eval_cmd(const EvalOpts& opts) {
    auto kb = KnowledgeBase::open(opts.kb_dir);
    const EngineConfig cfg = overlay_config(kb.config(), opts.common);
    auto embedder = make_cli_embedder(opts.common, cfg);
    auto gateway = make_cli_gateway(opts.common, cfg, /*for_extraction=*/false);

    const auto items = load_qa_set(opts.qa_path);
    if (items.empty())
        throw InputError("QA set is empty: " + opts.qa_path);
    const auto report = run_eval(items, kb, *embedder, *gateway);

    if (opts.common.json_output) {
        json out;
        json rows = json::array();
        for (const auto& row : report.per_type)
            rows.push_back({{"type", row.type},
                            {"questions", row.questions},
                            {"correct", row.correct},
                            {"accuracy", row.accuracy()}});
        out["per_type"] = rows;
        out["total"] = {{"questions", report.questions},
                        {"correct", report.correct},
                        {"accuracy", report.accuracy()}};
        std::cout << out.dump(2) << "\n";
    } else {
        std::cout << "type       questions  correct  accuracy\n";
        auto emit = [](const std::string& type, int questions, int correct,
                       double accuracy) {
            std::printf("%-10s %9d %8d  ", type.c_str(), questions, correct);
            if (questions == 0)
                std::printf("%7s\n", "-");
            else
                std::printf("%6.1f%%\n", accuracy * 100.0);
        };
        for (const auto& row : report.per_type)
            emit(row.type, row.questions, row.correct, row.accuracy());
        emit("total", report.questions, report.correct, report.accuracy());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multimodal retrieval-augmented QA engine for financial documents"};
    app.require_subcommand(1);

    IngestOpts ingest;
    auto* ingest_cmd = app.add_subcommand(
        "ingest", "Build a knowledge base from a document and a region manifest");
    ingest_cmd->add_option("--doc", ingest.doc_path, "Extracted plain-text document")
        ->required();
    ingest_cmd->add_option("--manifest", ingest.manifest_path,
                           "Region manifest JSONL (omit for a text-only KB)");
    ingest_cmd->add_option("--kb", ingest.kb_dir, "Knowledge base directory")
        ->required();
    ingest_cmd->add_option("--doc-id", ingest.doc_id,
                           "Document id (default: document filename stem)");
    ingest_cmd->add_option("--index", ingest.index_kind, "Index kind")
        ->check(CLI::IsMember({"hnsw", "flat"}))
        ->default_val("hnsw");
    add_common_flags(ingest_cmd, ingest.common, /*with_gateway=*/true);

    QueryOpts query;
    auto* query_cmd = app.add_subcommand("query", "Answer one question over a KB");
    query_cmd->add_option("--kb", query.kb_dir, "Knowledge base directory")->required();
    query_cmd->add_option("--question", query.question, "Question text");
    query_cmd->add_flag("--repl", query.repl, "Read questions from stdin, one per line");
    query_cmd->add_option("--trace", query.trace_path, "Write the tier trace JSON here");
    add_common_flags(query_cmd, query.common, /*with_gateway=*/true);

    CalibrateOpts calibrate;
    auto* cal_cmd =
        app.add_subcommand("calibrate", "Sweep similarity thresholds over a dev set");
    cal_cmd->add_option("--kb", calibrate.kb_dir, "Knowledge base directory")->required();
    cal_cmd->add_option("--dev", calibrate.dev_path, "Dev set JSONL")->required();
    cal_cmd->add_option("--out", calibrate.out_csv, "Output CSV of grid points")
        ->required();
    cal_cmd->add_option("--summary", calibrate.summary_path, "Write JSON summary here");
    cal_cmd->add_option("--budget", calibrate.budget,
                        "Context token budget (default: max_context_tokens)");
    add_common_flags(cal_cmd, calibrate.common, /*with_gateway=*/false);

    std::string stats_kb;
    bool stats_json = false;
    auto* stats_cmd = app.add_subcommand("stats", "Show KB counts and config");
    stats_cmd->add_option("--kb", stats_kb, "Knowledge base directory")->required();
    stats_cmd->add_flag("--json", stats_json, "Machine-readable JSON output");

    EvalOpts eval;
    auto* eval_cmd =
        app.add_subcommand("eval", "Score a QA set with normalized exact match");
    eval_cmd->add_option("--kb", eval.kb_dir, "Knowledge base directory")->required();
    eval_cmd->add_option("--qa", eval.qa_path, "QA set JSONL")->required();
    add_common_flags(eval_cmd, eval.common, /*with_gateway=*/true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0)
            return app.exit(e); // --help / --version
        app.exit(e);
        return 1;
    }

    try {
        if (*ingest_cmd)
            return run_ingest(ingest);
        if (*query_cmd) {
            if (!query.repl && query.question.empty())
                throw InputError("query needs --question or --repl");
            return run_query(query);
        }
        if (*cal_cmd)
            return run_calibrate(calibrate);
        if (*stats_cmd)
            return run_stats(stats_kb, stats_json);
        if (*eval_cmd)
            return run_eval_cmd(eval);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const TransportError& e) {
        std::cerr << "transport error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
