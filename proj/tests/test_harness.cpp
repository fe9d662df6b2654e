#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "pdrop/errors.hpp"
#include "pdrop/harness.hpp"
#include "pdrop/report_json.hpp"

using namespace pdrop;

namespace {

std::filesystem::path temp_dir() {
    auto p = std::filesystem::temp_directory_path() / "pdrop_harness_test";
    std::filesystem::create_directories(p);
    return p;
}

harness::ExperimentSpec marker_spec() {
    harness::ExperimentSpec s;
    s.image_tokens = 64;
    s.marked = 4;
    s.pdrop = {4, 0.5};
    return s;
}

}  // namespace

TEST(MarkerFixture, LayoutAndMarkers) {
    const std::vector<std::size_t> dims = {1, 2, 3};
    const auto fx = harness::make_marker_fixture(model::ModelConfig{}, 32, 5, 4, 2, dims, 3);
    EXPECT_EQ(fx.sequence.image_count(), 32u);
    EXPECT_EQ(fx.sequence.size(), 38u);
    ASSERT_EQ(fx.marked.size(), 5u);
    EXPECT_TRUE(std::is_sorted(fx.marked.begin(), fx.marked.end()));
    const auto& emb = fx.sequence.image_embeddings();
    for (std::size_t r = 0; r < 32; ++r) {
        const bool marked = std::count(fx.marked.begin(), fx.marked.end(), r) > 0;
        for (std::size_t c : dims) {
            EXPECT_EQ(emb(r, c), marked ? 1.0 : 0.0);
        }
    }
    EXPECT_THROW(harness::make_marker_fixture(model::ModelConfig{}, 4, 5, 4, 0, dims, 0), ConfigError);
}

TEST(RunStrategy, PyramidDropKeepsAllMarkers) {
    const auto spec = marker_spec();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto r = harness::run_single(spec, seed);
        EXPECT_EQ(r.recall, 1.0);
        ASSERT_EQ(r.stages.size(), 3u);
        EXPECT_EQ(r.stages.back().kept.size(), 8u);
    }
}

TEST(RunStrategy, RandomControlMatchesChance) {
    const double mean = harness::random_drop_recall(marker_spec(), 300);
    EXPECT_NEAR(mean, 8.0 / 64.0, 0.04);
}

TEST(RunStrategy, RerunIsBitIdentical) {
    auto spec = marker_spec();
    spec.weights = harness::WeightsKind::Random;
    const auto a = harness::run_single(spec, 7);
    const auto b = harness::run_single(spec, 7);
    EXPECT_EQ(a.digest, b.digest);
    EXPECT_EQ(a.digest.size(), 16u);
    EXPECT_NE(a.digest, harness::run_single(spec, 8).digest);
}

TEST(RunCompare, RecallAndCostAtHighResolution) {
    auto spec = marker_spec();
    spec.image_tokens = 576;
    spec.marked = 8;
    spec.cost_hidden = 4096;
    spec.cost_ffn = 11008;
    spec.strategies = {"vanilla", "pdrop", "random", "fastv", "qformer"};
    const auto reports = harness::run_compare(spec);
    ASSERT_EQ(reports.size(), 5u);
    EXPECT_EQ(reports[0].strategy, "vanilla");
    EXPECT_EQ(reports[0].recall, 1.0);
    EXPECT_DOUBLE_EQ(reports[0].cost.ratio, 1.0);
    EXPECT_EQ(reports[1].recall, 1.0);
    EXPECT_LT(reports[1].cost.ratio, 0.5);
    EXPECT_GT(reports[1].cost.ratio, 0.45);
    EXPECT_LT(reports[2].recall, 1.0);
    EXPECT_EQ(reports[2].cost.total, reports[1].cost.total);
    EXPECT_EQ(reports[4].stages.size(), 1u);
    EXPECT_EQ(reports[4].stages[0].kept.size(), 288u);
}

TEST(RunStrategy, UnknownStrategyThrows) {
    auto spec = marker_spec();
    spec.strategy = "tome";
    EXPECT_THROW(harness::run_single(spec, 0), ConfigError);
}

TEST(LayerSweep, FullKeepRatioHasFullRecall) {
    auto spec = marker_spec();
    spec.sweep_layers = {1, 3, 5, 7};
    spec.sweep_ratios = {1.0};
    for (const auto& row : harness::run_layer_sweep(spec)) {
        EXPECT_EQ(row.recall, 1.0);
        EXPECT_EQ(row.kept_count, 64u);
    }
}

TEST(LayerSweep, LaterDropsAreSaferThanEarlyOnes) {
    auto spec = marker_spec();
    spec.marker_onset = 4;
    spec.sweep_layers = {1, 2, 3, 4, 5, 6, 7};
    spec.sweep_ratios = {0.1};
    spec.sweep_fixtures = 3;
    const auto rows = harness::run_layer_sweep(spec);
    ASSERT_EQ(rows.size(), 7u);
    for (const auto& row : rows) {
        if (row.layer >= 4) {
            EXPECT_EQ(row.recall, 1.0) << "layer " << row.layer;
        } else {
            EXPECT_LT(row.recall, 1.0) << "layer " << row.layer;
        }
    }
    EXPECT_LT(rows[0].flops, rows[6].flops);
}

TEST(LayerSweep, LayerOutOfRangeThrows) {
    auto spec = marker_spec();
    spec.sweep_layers = {8};
    EXPECT_THROW(harness::run_layer_sweep(spec), ConfigError);
    spec.sweep_layers = {0};
    EXPECT_THROW(harness::run_layer_sweep(spec), ConfigError);
}

TEST(LayerSweep, CsvFormat) {
    const std::vector<harness::SweepRow> rows = {{2, 0.5, 0.75, 32, 1234}, {3, 0.25, 1.0, 16, 99}};
    const std::string csv = harness::sweep_csv(rows);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "layer,keep_ratio,recall,kept_count,flops");
    EXPECT_NE(csv.find("\n2,0.5,0.75,32,1234\n"), std::string::npos);
    EXPECT_NE(csv.find("\n3,0.25,1,16,99\n"), std::string::npos);
}

TEST(Masks, KeepAllListsEveryPosition) {
    auto spec = marker_spec();
    spec.image_tokens = 16;
    spec.pdrop = {4, 1.0};
    const auto r = harness::run_single(spec, 0);
    for (const auto& s : r.stages) {
        ASSERT_EQ(s.kept.size(), 16u);
        for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(s.kept[i], i);
    }
}

TEST(Masks, EmitAndReloadNested) {
    auto spec = marker_spec();
    spec.image_tokens = 16;
    spec.marked = 2;
    const auto r = harness::run_single(spec, 1);
    const auto path = temp_dir() / "masks.json";
    harness::emit_masks(r, path);
    const auto masks = harness::load_masks(path);
    ASSERT_EQ(masks.size(), 3u);
    EXPECT_EQ(masks[0].boundary, 2u);
    EXPECT_EQ(masks[1].boundary, 4u);
    EXPECT_EQ(masks[2].boundary, 6u);
    EXPECT_EQ(masks[0].kept.size(), 8u);
    EXPECT_EQ(masks[1].kept.size(), 4u);
    EXPECT_EQ(masks[2].kept.size(), 2u);

    std::ofstream(path) << R"({"stages":[{"boundary":2,"kept":[0,1]},{"boundary":4,"kept":[2]}]})";
    EXPECT_THROW(harness::load_masks(path), InputError);
    std::ofstream(path) << R"({"stages":[{"boundary":2}]})";
    EXPECT_THROW(harness::load_masks(path), InputError);

    auto vanilla = spec;
    vanilla.strategy = "vanilla";
    EXPECT_THROW(harness::emit_masks(harness::run_single(vanilla, 0), path), InputError);
}

TEST(Parsing, RatioGrid) {
    const auto g = harness::parse_ratio_grid("0.1:0.5:0.1");
    ASSERT_EQ(g.size(), 5u);
    EXPECT_NEAR(g.back(), 0.5, 1e-12);
    EXPECT_EQ(harness::parse_ratio_grid("0.25,1"), (std::vector<double>{0.25, 1.0}));
    EXPECT_THROW(harness::parse_ratio_grid("0.5:0.1:0.1"), ConfigError);
    EXPECT_THROW(harness::parse_ratio_grid("abc"), ConfigError);
    EXPECT_EQ(harness::parse_layer_list("2,4,6"), (std::vector<std::size_t>{2, 4, 6}));
    EXPECT_THROW(harness::parse_layer_list("2,x"), ConfigError);
}

TEST(ConfigJson, ParsesAllSections) {
    const auto dir = temp_dir();
    std::ofstream(dir / "fx.json") << R"({"image": [[0,0,0,0,0,0,0,0],[0,1,1,1,0,0,0,0],[0,0,0,0,0,0,0,0]],)"
                                      R"( "instruction": [3, 4], "answer": [5], "marked": [1]})";
    std::ofstream(dir / "cfg.json") << R"({
      "seed": 11,
      "model": {"layers": 4, "hidden_size": 8, "num_heads": 2, "head_dim": 4, "ffn_intermediate": 16,
                "vocab_size": 16, "max_positions": 64},
      "weights": {"kind": "marker", "marker_dims": [1, 2, 3], "onset_layer": 1},
      "sequence": {"fixture": "fx.json"},
      "strategy": "pdrop",
      "pdrop": {"stages": 2, "lambda": 0.5},
      "sweep": {"layers": [1, 2], "ratios": [0.5, 1.0], "fixtures": 2},
      "cost": {"hidden_size": 4096, "ffn_intermediate": 11008}
    })";
    const auto spec = io::load_spec(dir / "cfg.json");
    EXPECT_EQ(spec.seed, 11u);
    EXPECT_EQ(spec.model.num_layers, 4u);
    EXPECT_EQ(spec.pdrop.stages, 2u);
    EXPECT_EQ(spec.sweep_layers, (std::vector<std::size_t>{1, 2}));
    EXPECT_EQ(spec.cost_hidden, 4096u);
    ASSERT_TRUE(spec.fixture_path.has_value());
    EXPECT_EQ(*spec.fixture_path, dir / "fx.json");

    const auto r = harness::run_single(spec, spec.seed);
    EXPECT_EQ(r.recall, 1.0);
    ASSERT_EQ(r.stages.size(), 1u);
    EXPECT_EQ(r.stages[0].kept, (std::vector<std::size_t>{1}));

    std::ofstream(dir / "bad.json") << R"({"pdrop": {"lambda": "half"}})";
    EXPECT_THROW(io::load_spec(dir / "bad.json"), ConfigError);
    std::ofstream(dir / "broken.json") << "{";
    EXPECT_THROW(io::load_spec(dir / "broken.json"), ConfigError);
    EXPECT_THROW(io::load_spec(dir / "absent.json"), IoError);
}

TEST(ReportJson, CostReportFields) {
    const auto j = io::to_json(cost::strategy_cost(pruner::PyramidDrop{4, 0.5}, 32, 576, 4096, 11008));
    EXPECT_EQ(j.at("unit"), "FLOPs");
    EXPECT_EQ(j.at("total").get<std::uint64_t>(), 1777399234560ULL);
    EXPECT_EQ(j.at("per_stage").size(), 4u);
    EXPECT_DOUBLE_EQ(j.at("avg_tokens").get<double>(), 270.0);
}

TEST(LayerSweep, MarkerMarginHoldsAtEveryLayer) {
    auto spec = marker_spec();
    spec.sweep_layers = {1, 2, 3, 4, 5, 6, 7};
    spec.sweep_ratios = {8.0 / 64.0};
    spec.sweep_fixtures = 4;
    for (const auto& row : harness::run_layer_sweep(spec)) {
        EXPECT_EQ(row.kept_count, 8u);
        EXPECT_EQ(row.recall, 1.0) << "layer " << row.layer;
    }
}

TEST(RunCompare, PyramidBeatsRandomAtSixtyFourTokens) {
    auto spec = marker_spec();
    spec.strategies = {"pdrop", "random"};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        spec.seed = seed;
        const auto reports = harness::run_compare(spec);
        EXPECT_EQ(reports[0].recall, 1.0);
        EXPECT_LT(reports[1].recall, 1.0) << "seed " << seed;
    }
}
