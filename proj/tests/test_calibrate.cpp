#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "finrag/calibrate.hpp"
#include "finrag/chunk.hpp"

#include "test_support.hpp"

using namespace finrag;

namespace {

constexpr int kDim = 64;

EngineConfig planted_config() {
    EngineConfig cfg;
    cfg.embed_dim = kDim;
    return cfg;
}

TextChunk planted_text(std::uint32_t seq, EmbeddingVector v, const std::string& text) {
    std::vector<SentencePiece> pieces;
    pieces.push_back({static_cast<int>(seq), text, estimate_tokens(text)});
    auto c = make_chunk(std::move(pieces));
    c.id = ChunkId{"doc", Modality::Text, seq};
    c.embedding = std::move(v);
    return c;
}

TableRecord planted_table(std::uint32_t seq, EmbeddingVector v) {
    TableRecord r;
    r.id = ChunkId{"doc", Modality::Table, seq};
    r.region_id = "t" + std::to_string(seq);
    r.summary = "Planted table " + std::to_string(seq) + ".";
    r.structured_json = "{}";
    r.status = ExtractStatus::Parsed;
    r.embedding = std::move(v);
    return r;
}

ImageRecord planted_image(std::uint32_t seq, EmbeddingVector v) {
    ImageRecord r;
    r.id = ChunkId{"doc", Modality::Image, seq};
    r.region_id = "f" + std::to_string(seq);
    r.summary = "Planted image " + std::to_string(seq) + ".";
    r.status = ExtractStatus::Parsed;
    r.embedding = std::move(v);
    return r;
}

// The planted-optimum fixture: gold text at 0.72 / noise at 0.68 pins
// theta_text = 0.70; gold tables at 0.67 / noise at 0.62 pin theta_table
// = 0.65; gold images at 0.57 pin theta_image = 0.55.
struct Fixture {
    testsupport::TempDir dir{"calib"};
    std::unique_ptr<KnowledgeBase> kb;
    std::unique_ptr<testsupport::PlantedEmbedder> embedder;
    std::vector<DevSample> dev;

    Fixture() {
        std::mt19937_64 rng(4242);
        embedder = std::make_unique<testsupport::PlantedEmbedder>(kDim);
        auto builder = KnowledgeBase::init(dir / "kb", planted_config(), /*hnsw=*/false);
        builder.add_document("doc");

        std::uint32_t text_seq = 0, table_seq = 0, image_seq = 0;

        // Two text-answerable samples: six gold chunks each at 0.72,
        // four noise chunks at 0.68.
        for (int s = 0; s < 2; ++s) {
            const auto q = testsupport::random_unit(rng, kDim);
            const std::string query = "text question " + std::to_string(s);
            embedder->plant(query, q);
            DevSample sample;
            sample.query = query;
            sample.answer = "planted";
            for (int g = 0; g < 6; ++g) {
                const auto id = ChunkId{"doc", Modality::Text, text_seq};
                builder.append_text(planted_text(
                    text_seq, testsupport::at_similarity(q, 0.72, rng),
                    "Gold text " + std::to_string(text_seq) + "."));
                sample.gold_text.push_back(id);
                ++text_seq;
            }
            for (int n = 0; n < 4; ++n) {
                builder.append_text(planted_text(
                    text_seq, testsupport::at_similarity(q, 0.68, rng),
                    "Near-miss text " + std::to_string(text_seq) + "."));
                ++text_seq;
            }
            dev.push_back(std::move(sample));
        }

        // Two fallback samples: no text support, two gold tables at
        // 0.67 with two noise tables at 0.62, one gold image at 0.57
        // with one noise image at 0.52.
        for (int s = 0; s < 2; ++s) {
            const auto q = testsupport::random_unit(rng, kDim);
            const std::string query = "fallback question " + std::to_string(s);
            embedder->plant(query, q);
            DevSample sample;
            sample.query = query;
            sample.answer = "planted";
            for (int g = 0; g < 2; ++g) {
                const auto id = ChunkId{"doc", Modality::Table, table_seq};
                builder.append_table(
                    planted_table(table_seq, testsupport::at_similarity(q, 0.67, rng)));
                sample.gold_table.push_back(id);
                ++table_seq;
            }
            for (int n = 0; n < 2; ++n) {
                builder.append_table(
                    planted_table(table_seq, testsupport::at_similarity(q, 0.62, rng)));
                ++table_seq;
            }
            {
                const auto id = ChunkId{"doc", Modality::Image, image_seq};
                builder.append_image(
                    planted_image(image_seq, testsupport::at_similarity(q, 0.57, rng)));
                sample.gold_image.push_back(id);
                ++image_seq;
                builder.append_image(
                    planted_image(image_seq, testsupport::at_similarity(q, 0.52, rng)));
                ++image_seq;
            }
            dev.push_back(std::move(sample));
        }

        builder.finalize();
        kb = std::make_unique<KnowledgeBase>(KnowledgeBase::open(dir / "kb"));
    }
};

} // namespace

TEST_CASE("sweep grids are complete: 7 text points, 25 pair points") {
    Fixture fx;
    const auto text_points = sweep_text(fx.dev, *fx.kb, *fx.embedder);
    REQUIRE(text_points.size() == 7);
    for (int i = 0; i < 7; ++i)
        CHECK(text_points[static_cast<std::size_t>(i)].theta_text ==
              doctest::Approx(0.55 + 0.05 * i));

    const auto pair_points = sweep_table_image(fx.dev, *fx.kb, *fx.embedder, 0.70);
    REQUIRE(pair_points.size() == 25);
    std::size_t k = 0;
    for (int t = 0; t < 5; ++t)
        for (int i = 0; i < 5; ++i, ++k) {
            CHECK(pair_points[k].theta_table == doctest::Approx(0.55 + 0.05 * t));
            CHECK(pair_points[k].theta_image == doctest::Approx(0.55 + 0.05 * i));
            CHECK(pair_points[k].theta_text == doctest::Approx(0.70));
        }
}

TEST_CASE("precision jumps at the 0.70 -> 0.75 text boundary") {
    Fixture fx;
    // Only the text samples matter here.
    std::vector<DevSample> text_dev(fx.dev.begin(), fx.dev.begin() + 2);
    const auto points = sweep_text(text_dev, *fx.kb, *fx.embedder);

    auto at = [&](double theta) {
        for (const auto& p : points)
            if (std::abs(p.theta_text - theta) < 1e-9)
                return p;
        FAIL("missing grid point");
        return points[0];
    };

    // At 0.70 the 0.68 noise drops out: precision 1, accuracy 1.
    CHECK(at(0.70).context_precision == doctest::Approx(1.0));
    CHECK(at(0.70).qa_accuracy == doctest::Approx(1.0));
    // At 0.65 noise pollutes: 6 gold of 10 retrieved.
    CHECK(at(0.65).context_precision == doctest::Approx(0.6));
    CHECK(at(0.65).qa_accuracy == doctest::Approx(1.0));
    // Past the plant nothing is retrieved.
    CHECK(at(0.75).context_precision == doctest::Approx(0.0));
    CHECK(at(0.75).qa_accuracy == doctest::Approx(0.0));
}

TEST_CASE("planted optimum: the full run selects (0.70, 0.65, 0.55)") {
    Fixture fx;
    const auto run = run_calibration(fx.dev, *fx.kb, *fx.embedder);
    CHECK(run.text_points.size() == 7);
    CHECK(run.pair_points.size() == 25);
    CHECK(run.selected[0] == doctest::Approx(0.70));
    CHECK(run.selected[1] == doctest::Approx(0.65));
    CHECK(run.selected[2] == doctest::Approx(0.55));
}

TEST_CASE("hand-computed precision at a loose table threshold") {
    Fixture fx;
    std::vector<DevSample> fb_dev(fx.dev.begin() + 2, fx.dev.end());
    const auto points = sweep_table_image(fb_dev, *fx.kb, *fx.embedder, 0.70);
    for (const auto& p : points) {
        if (std::abs(p.theta_table - 0.55) < 1e-9 &&
            std::abs(p.theta_image - 0.55) < 1e-9) {
            // Retrieved per sample: 4 tables (2 gold) + 1 gold image.
            CHECK(p.context_precision == doctest::Approx(0.6));
            CHECK(p.qa_accuracy == doctest::Approx(1.0));
        }
        if (std::abs(p.theta_table - 0.70) < 1e-9 &&
            std::abs(p.theta_image - 0.55) < 1e-9) {
            // Gold tables at 0.67 are missed: accuracy collapses.
            CHECK(p.qa_accuracy == doctest::Approx(0.0));
        }
    }
}

TEST_CASE("image-only dev set is invariant to theta_table") {
    Fixture fx;
    std::vector<DevSample> image_dev;
    DevSample s = fx.dev[2];
    s.gold_table.clear(); // image gold only
    image_dev.push_back(s);

    const auto points = sweep_table_image(image_dev, *fx.kb, *fx.embedder, 0.70);
    // For each theta_image, accuracy must not depend on theta_table.
    for (int i = 0; i < 5; ++i) {
        const double acc0 = points[static_cast<std::size_t>(i)].qa_accuracy;
        for (int t = 1; t < 5; ++t)
            CHECK(points[static_cast<std::size_t>(t * 5 + i)].qa_accuracy ==
                  doctest::Approx(acc0));
    }
}

TEST_CASE("empty KB scores zero everywhere") {
    testsupport::TempDir dir("calib-empty");
    auto builder = KnowledgeBase::init(dir / "kb", planted_config(), false);
    builder.finalize();
    auto kb = KnowledgeBase::open(dir / "kb");
    TokenHashEmbedder embedder(kDim);

    std::vector<DevSample> dev(1);
    dev[0].query = "anything at all";
    dev[0].gold_text.push_back(ChunkId{"doc", Modality::Text, 0});

    const auto points = sweep_text(dev, kb, embedder);
    for (const auto& p : points) {
        CHECK(p.context_precision == 0.0);
        CHECK(p.qa_accuracy == 0.0);
    }
}

TEST_CASE("empty dev set is rejected") {
    testsupport::TempDir dir("calib-nodev");
    auto builder = KnowledgeBase::init(dir / "kb", planted_config(), false);
    builder.finalize();
    auto kb = KnowledgeBase::open(dir / "kb");
    TokenHashEmbedder embedder(kDim);
    CHECK_THROWS_AS(static_cast<void>(sweep_text({}, kb, embedder)), InputError);
}

TEST_CASE("select_triplet: argmax, tie rule, infeasibility, permutation") {
    std::vector<CalibrationPoint> points;
    CalibrationPoint a;
    a.theta_text = 0.60;
    a.theta_table = 0.55;
    a.theta_image = 0.55;
    a.qa_accuracy = 0.8;
    a.context_precision = 0.4;
    CalibrationPoint b = a;
    b.theta_text = 0.70;
    b.theta_table = 0.65;
    b.theta_image = 0.55;
    // Same score as a: the tighter thresholds must win.
    points = {a, b};
    auto sel = select_triplet(points, 0.25);
    CHECK(sel[0] == doctest::Approx(0.70));
    CHECK(sel[1] == doctest::Approx(0.65));

    // Strictly better score wins regardless of position.
    CalibrationPoint c = a;
    c.theta_text = 0.55;
    c.qa_accuracy = 0.95;
    points = {a, b, c};
    CHECK(select_triplet(points, 0.25)[0] == doctest::Approx(0.55));

    // Permutation never changes the selection.
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        auto shuffled = points;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(select_triplet(shuffled, 0.25)[0] == doctest::Approx(0.55));
    }

    // Infeasible points are skipped; all-infeasible is an error.
    for (auto& p : points)
        p.feasible = false;
    CHECK_THROWS_AS(select_triplet(points, 0.25), DataError);
}

TEST_CASE("budget infeasibility marks points and select respects it") {
    Fixture fx;
    CalibrationOptions opts;
    opts.budget_tokens = 0.5; // below any non-empty retrieval
    const auto points = sweep_text(fx.dev, *fx.kb, *fx.embedder, opts);
    bool any_infeasible = false;
    for (const auto& p : points)
        if (!p.feasible)
            any_infeasible = true;
    CHECK(any_infeasible);
}

TEST_CASE("dev set loading validates shape and gold presence") {
    testsupport::TempDir dir("devset");
    testsupport::write_file(
        dir / "dev.jsonl",
        R"({"query": "q1", "answer": "a", "gold_text": ["doc/text/0"]})"
        "\n"
        R"({"query": "q2", "answer": "-", "unanswerable": true})"
        "\n");
    const auto dev = load_dev_set(dir / "dev.jsonl");
    REQUIRE(dev.size() == 2);
    CHECK(dev[0].gold_text.size() == 1);
    CHECK(dev[1].unanswerable);

    testsupport::write_file(dir / "bad.jsonl", R"({"query": "no gold ids"})"
                                               "\n");
    CHECK_THROWS_AS(static_cast<void>(load_dev_set(dir / "bad.jsonl")), InputError);
}

TEST_CASE("csv export emits a header plus 32 rows") {
    Fixture fx;
    const auto run = run_calibration(fx.dev, *fx.kb, *fx.embedder);
    const auto csv_path = fx.dir / "points.csv";
    write_points_csv(csv_path, run);

    std::ifstream in(csv_path);
    std::string line;
    int rows = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (!header_seen) {
            CHECK(line.find("theta_text") != std::string::npos);
            header_seen = true;
            continue;
        }
        ++rows;
    }
    CHECK(rows == 32);
}
