#include "finrag/calibrate.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "finrag/retrieve.hpp"

namespace finrag {

using nlohmann::json;

namespace {

// Grid values built from integer hundredths so 0.55 + k*0.05 carries no
// accumulated float error.
double grid_value(int hundredths) { return static_cast<double>(hundredths) / 100.0; }

std::vector<ChunkId> parse_gold(const json& row, const char* field) {
    std::vector<ChunkId> out;
    if (!row.contains(field))
        return out;
    for (const auto& v : row.at(field))
        out.push_back(ChunkId::parse(v.get<std::string>()));
    return out;
}

struct SampleEval {
    std::set<ChunkId> retrieved;
    std::set<ChunkId> gold;
    int context_tokens = 0;
};

// One sample, one threshold triple. `text_only` mirrors sweep (1), which
// feeds text retrieval straight to the scripted QA without fallback.
SampleEval eval_sample(const DevSample& sample, const KnowledgeBase& kb,
                       Embedder& embedder, const EngineConfig& config,
                       bool text_only) {
    Query q = make_query(sample.query, config, embedder);

    SampleEval ev;
    for (const auto& id : sample.gold_text)
        ev.gold.insert(id);
    for (const auto& id : sample.gold_table)
        ev.gold.insert(id);
    for (const auto& id : sample.gold_image)
        ev.gold.insert(id);

    TierTrace trace;
    trace.text_hits = retrieve_text(q, kb.text_index());
    if (!text_only &&
        decide_tier(trace.text_hits, config.min_text_hits) == Tier::Fallback) {
        auto [tables, images] = retrieve_fallback(q, kb.table_index(), kb.image_index());
        trace.table_hits = std::move(tables);
        trace.image_hits = std::move(images);
    }

    for (const auto* hits : {&trace.text_hits, &trace.table_hits, &trace.image_hits})
        for (const auto& h : *hits)
            ev.retrieved.insert(h.id);

    for (const auto& h : trace.text_hits)
        if (const auto* rec = kb.text(h.id))
            ev.context_tokens += rec->token_estimate;
    for (const auto& h : trace.table_hits)
        if (const auto* rec = kb.table(h.id))
            ev.context_tokens += estimate_tokens(rec->summary) +
                                 estimate_tokens(rec->structured_json);
    for (const auto& h : trace.image_hits)
        if (const auto* rec = kb.image(h.id))
            ev.context_tokens += estimate_tokens(rec->summary);
    return ev;
}

CalibrationPoint eval_point(const std::vector<DevSample>& dev, const KnowledgeBase& kb,
                            Embedder& embedder, const EngineConfig& config,
                            bool text_only, const CalibrationOptions& options) {
    CalibrationPoint point;
    point.theta_text = config.theta_text;
    point.theta_table = config.theta_table;
    point.theta_image = config.theta_image;

    std::size_t retrieved_total = 0;
    std::size_t retrieved_gold = 0;
    int correct = 0;
    double token_sum = 0;

    for (const auto& sample : dev) {
        const auto ev = eval_sample(sample, kb, embedder, config, text_only);
        retrieved_total += ev.retrieved.size();
        for (const auto& id : ev.retrieved)
            if (ev.gold.count(id))
                ++retrieved_gold;
        token_sum += ev.context_tokens;

        // Scripted QA: correct iff every gold context was retrieved;
        // unanswerable samples are correct iff retrieval came back empty.
        bool ok;
        if (sample.unanswerable) {
            ok = ev.retrieved.empty();
        } else {
            ok = !ev.gold.empty() &&
                 std::all_of(ev.gold.begin(), ev.gold.end(),
                             [&](const ChunkId& id) { return ev.retrieved.count(id); });
        }
        if (ok)
            ++correct;
    }

    point.context_precision =
        retrieved_total == 0
            ? 0.0
            : static_cast<double>(retrieved_gold) / static_cast<double>(retrieved_total);
    point.qa_accuracy =
        dev.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(dev.size());
    point.mean_context_tokens =
        dev.empty() ? 0.0 : token_sum / static_cast<double>(dev.size());
    point.feasible = point.mean_context_tokens <= options.budget_tokens;
    return point;
}

double point_score(const CalibrationPoint& p, double w) {
    return p.qa_accuracy + w * p.context_precision;
}

} // namespace

std::vector<DevSample> load_dev_set(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw InputError("cannot open dev set: " + path.string());
    std::vector<DevSample> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        const auto where = path.string() + ":" + std::to_string(lineno);
        json row = json::parse(line, nullptr, false);
        if (row.is_discarded() || !row.is_object() || !row.contains("query"))
            throw InputError(where + ": malformed dev sample");
        DevSample s;
        s.query = row.at("query").get<std::string>();
        s.answer = row.value("answer", std::string{});
        s.gold_text = parse_gold(row, "gold_text");
        s.gold_table = parse_gold(row, "gold_table");
        s.gold_image = parse_gold(row, "gold_image");
        s.unanswerable = row.value("unanswerable", false);
        if (!s.unanswerable && s.gold_text.empty() && s.gold_table.empty() &&
            s.gold_image.empty())
            throw InputError(where +
                             ": sample needs gold ids or \"unanswerable\": true");
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<CalibrationPoint> sweep_text(const std::vector<DevSample>& dev,
                                         const KnowledgeBase& kb, Embedder& embedder,
                                         const CalibrationOptions& options) {
    if (dev.empty())
        throw InputError("dev set is empty");
    std::vector<CalibrationPoint> points;
    for (int h = 55; h <= 85; h += 5) {
        EngineConfig config = kb.config();
        config.theta_text = grid_value(h);
        points.push_back(eval_point(dev, kb, embedder, config, /*text_only=*/true,
                                    options));
    }
    return points;
}

std::vector<CalibrationPoint> sweep_table_image(const std::vector<DevSample>& dev,
                                                const KnowledgeBase& kb,
                                                Embedder& embedder, double theta_text,
                                                const CalibrationOptions& options) {
    if (dev.empty())
        throw InputError("dev set is empty");
    std::vector<CalibrationPoint> points;
    for (int ht = 55; ht <= 75; ht += 5) {
        for (int hi = 55; hi <= 75; hi += 5) {
            EngineConfig config = kb.config();
            config.theta_text = theta_text;
            config.theta_table = grid_value(ht);
            config.theta_image = grid_value(hi);
            points.push_back(eval_point(dev, kb, embedder, config,
                                        /*text_only=*/false, options));
        }
    }
    return points;
}

std::array<double, 3> select_triplet(const std::vector<CalibrationPoint>& points,
                                     double precision_weight) {
    const CalibrationPoint* best = nullptr;
    for (const auto& p : points) {
        if (!p.feasible)
            continue;
        if (!best) {
            best = &p;
            continue;
        }
        const double s = point_score(p, precision_weight);
        const double bs = point_score(*best, precision_weight);
        if (s > bs ||
            (s == bs && std::tie(p.theta_text, p.theta_table, p.theta_image) >
                            std::tie(best->theta_text, best->theta_table,
                                     best->theta_image)))
            best = &p;
    }
    if (!best)
        throw DataError("no calibration point fits the context budget; "
                        "increase --budget and rerun");
    return {best->theta_text, best->theta_table, best->theta_image};
}

CalibrationRun run_calibration(const std::vector<DevSample>& dev,
                               const KnowledgeBase& kb, Embedder& embedder,
                               const CalibrationOptions& options) {
    CalibrationRun run;
    run.text_points = sweep_text(dev, kb, embedder, options);
    const auto text_choice = select_triplet(run.text_points, options.precision_weight);
    run.pair_points =
        sweep_table_image(dev, kb, embedder, text_choice[0], options);
    run.selected = select_triplet(run.pair_points, options.precision_weight);
    return run;
}

void write_points_csv(const std::filesystem::path& path, const CalibrationRun& run) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw InputError("cannot write CSV: " + path.string());
    out << "stage,theta_text,theta_table,theta_image,context_precision,"
           "qa_accuracy,mean_context_tokens,feasible\n";
    auto emit = [&](const char* stage, const CalibrationPoint& p) {
        std::ostringstream row;
        row << stage << ',' << p.theta_text << ',' << p.theta_table << ','
            << p.theta_image << ',' << p.context_precision << ',' << p.qa_accuracy
            << ',' << p.mean_context_tokens << ',' << (p.feasible ? 1 : 0);
        out << row.str() << "\n";
    };
    for (const auto& p : run.text_points)
        emit("text", p);
    for (const auto& p : run.pair_points)
        emit("table_image", p);
    out.flush();
    if (!out)
        throw InputError("CSV write failed: " + path.string());
}

} // namespace finrag
