#pragma once
// Threshold calibration: sweep theta_text over 0.55..0.85 (step 0.05),
// then (theta_table, theta_image) over 0.55..0.75 with theta_text fixed,
// and select the triplet maximizing a combined accuracy/precision score
// under a context-size budget.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "finrag/embedder.hpp"
#include "finrag/store.hpp"
#include "finrag/types.hpp"

namespace finrag {

struct DevSample {
    std::string query;
    std::string answer;
    std::vector<ChunkId> gold_text;
    std::vector<ChunkId> gold_table;
    std::vector<ChunkId> gold_image;
    bool unanswerable = false;
};

// JSONL rows: {"query", "answer", "gold_text": [ids], "gold_table": [...],
// "gold_image": [...], "unanswerable": bool}. A sample needs at least one
// gold id or the unanswerable marker.
std::vector<DevSample> load_dev_set(const std::filesystem::path& path);

struct CalibrationPoint {
    double theta_text = 0;
    double theta_table = 0;
    double theta_image = 0;
    double context_precision = 0; // fraction of retrieved contexts that are gold
    double qa_accuracy = 0;       // fraction of samples answered correctly
    double mean_context_tokens = 0;
    bool feasible = true; // mean context tokens within budget
};

struct CalibrationOptions {
    double budget_tokens = 8192; // per-query context budget
    double precision_weight = 0.25;
};

// Scripted QA stands in for the model during calibration: a sample is
// correct iff every gold context was retrieved (an unanswerable sample
// iff nothing was retrieved), so the sweep runs offline.

// 7 grid points, text-only retrieval.
std::vector<CalibrationPoint> sweep_text(const std::vector<DevSample>& dev,
                                         const KnowledgeBase& kb, Embedder& embedder,
                                         const CalibrationOptions& options = {});

// 25 grid points (5x5), full tiered retrieval with theta_text fixed.
std::vector<CalibrationPoint> sweep_table_image(const std::vector<DevSample>& dev,
                                                const KnowledgeBase& kb,
                                                Embedder& embedder, double theta_text,
                                                const CalibrationOptions& options = {});

// Pure argmax of qa_accuracy + precision_weight * context_precision over
// feasible points; ties prefer tighter retrieval (higher theta_text,
// then theta_table, then theta_image). Throws DataError when no point is
// feasible, advising a budget increase.
std::array<double, 3> select_triplet(const std::vector<CalibrationPoint>& points,
                                     double precision_weight = 0.25);

struct CalibrationRun {
    std::vector<CalibrationPoint> text_points; // 7
    std::vector<CalibrationPoint> pair_points; // 25
    std::array<double, 3> selected{0, 0, 0};
};

CalibrationRun run_calibration(const std::vector<DevSample>& dev,
                               const KnowledgeBase& kb, Embedder& embedder,
                               const CalibrationOptions& options = {});

// CSV of all points: stage, thetas, precision, accuracy, tokens, feasible.
void write_points_csv(const std::filesystem::path& path, const CalibrationRun& run);

} // namespace finrag
