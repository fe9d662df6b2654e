#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pdrop/errors.hpp"
#include "pdrop/pruner.hpp"

using namespace pdrop;
using pruner::SimilarityScores;

namespace {

SimilarityScores scores_at(std::vector<double> values, std::vector<std::size_t> positions = {}) {
    SimilarityScores s;
    if (positions.empty()) {
        positions.resize(values.size());
        std::iota(positions.begin(), positions.end(), std::size_t{0});
    }
    s.values = std::move(values);
    s.positions = std::move(positions);
    return s;
}

double mean(const std::vector<std::size_t>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

TEST(BuildSchedule, DefaultPyramidOnLlava15) {
    const auto s = pruner::build_schedule(32, 4, 0.5, 576);
    EXPECT_EQ(s.boundary_layers, (std::vector<std::size_t>{8, 16, 24}));
    EXPECT_EQ(s.stage_layer_counts, (std::vector<std::size_t>{8, 8, 8, 8}));
    EXPECT_EQ(s.stage_token_counts, (std::vector<std::size_t>{576, 288, 144, 72}));
}

TEST(BuildSchedule, CeilingDropRuleAtLambdaPointFour) {
    // 2880 - ceil(0.6*2880)=1152; 1152 - ceil(691.2)=460; 460 - 276=184.
    const auto s = pruner::build_schedule(32, 4, 0.4, 2880);
    EXPECT_EQ(s.stage_token_counts, (std::vector<std::size_t>{2880, 1152, 460, 184}));
}

TEST(BuildSchedule, SingleStageHasNoBoundary) {
    const auto s = pruner::build_schedule(32, 1, 0.5, 576);
    EXPECT_TRUE(s.boundary_layers.empty());
    EXPECT_EQ(s.stage_token_counts, (std::vector<std::size_t>{576}));
    EXPECT_TRUE(pruner::drop_events(s).empty());
}

TEST(BuildSchedule, RemainderLayersGoToLastStage) {
    const auto s = pruner::build_schedule(32, 3, 0.5, 576);
    EXPECT_EQ(s.stage_layer_counts, (std::vector<std::size_t>{10, 10, 12}));
    EXPECT_EQ(s.boundary_layers, (std::vector<std::size_t>{10, 20}));
}

TEST(BuildSchedule, InvalidParametersThrow) {
    EXPECT_THROW(pruner::build_schedule(4, 5, 0.5, 10), ConfigError);
    EXPECT_THROW(pruner::build_schedule(4, 0, 0.5, 10), ConfigError);
    EXPECT_THROW(pruner::build_schedule(4, 2, 0.0, 10), ConfigError);
    EXPECT_THROW(pruner::build_schedule(4, 2, 1.5, 10), ConfigError);
}

TEST(BuildSchedule, RandomDrawsFollowTheCeilingRecurrence) {
    // Integer oracle with lambda = k/100: drop = ceil((100-k) * c / 100).
    num::Rng rng(31337);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t layers = 1 + rng.below(64);
        const std::size_t stages = 1 + rng.below(layers);
        const std::uint64_t pct = 1 + rng.below(100);
        const std::size_t v0 = rng.below(6000);
        const auto s = pruner::build_schedule(layers, stages, static_cast<double>(pct) / 100.0, v0);

        ASSERT_EQ(s.stage_token_counts.size(), stages);
        ASSERT_EQ(s.boundary_layers.size(), stages - 1);
        ASSERT_EQ(std::accumulate(s.stage_layer_counts.begin(), s.stage_layer_counts.end(), std::size_t{0}), layers);
        ASSERT_EQ(s.stage_token_counts[0], v0);
        for (std::size_t i = 1; i < stages; ++i) {
            const std::uint64_t c = s.stage_token_counts[i - 1];
            const std::uint64_t drop = ((100 - pct) * c + 99) / 100;
            ASSERT_EQ(s.stage_token_counts[i], c - drop) << "trial " << trial;
        }
        for (std::size_t i = 0; i + 1 < s.boundary_layers.size(); ++i) {
            ASSERT_LT(s.boundary_layers[i], s.boundary_layers[i + 1]);
        }
        if (!s.boundary_layers.empty()) {
            ASSERT_LT(s.boundary_layers.back(), layers);
        }
    }
}

TEST(BuildSchedule, DyadicLambdaMatchesExponential) {
    for (std::size_t stages = 1; stages <= 6; ++stages) {
        const std::size_t v0 = 9 << (stages - 1);
        const auto s = pruner::build_schedule(24, stages, 0.5, v0);
        for (std::size_t i = 0; i < stages; ++i) {
            EXPECT_EQ(s.stage_token_counts[i], v0 >> i);
        }
    }
}

TEST(RankImageTokens, SingleHeadDotProducts) {
    const auto q = num::Matrix::from_rows({{1}});
    const std::vector<num::Matrix> k = {num::Matrix::from_rows({{2}, {0}, {-1}})};
    EXPECT_EQ(pruner::rank_image_tokens(q, k, 1).values, (std::vector<double>{2, 0, -1}));
}

TEST(RankImageTokens, HeadsAreAveraged) {
    const auto q = num::Matrix::from_rows({{1}, {1}});
    const std::vector<num::Matrix> k = {num::Matrix::from_rows({{1}, {0}}), num::Matrix::from_rows({{0}, {1}})};
    EXPECT_EQ(pruner::rank_image_tokens(q, k, 1).values, (std::vector<double>{0.5, 0.5}));
}

TEST(RankImageTokens, ScaledBySqrtHeadDim) {
    const auto q = num::Matrix::from_rows({{1, 1, 1, 1}});
    const std::vector<num::Matrix> k = {num::Matrix::from_rows({{1, 1, 1, 1}})};
    EXPECT_DOUBLE_EQ(pruner::rank_image_tokens(q, k, 4).values[0], 2.0);
}

TEST(RankImageTokens, OrthogonalQueryFallsBackToLowestIndices) {
    const auto q = num::Matrix::from_rows({{1, 0}});
    const std::vector<num::Matrix> k = {num::Matrix::from_rows({{0, 3}, {0, -1}, {0, 2}, {0, 5}})};
    auto s = pruner::rank_image_tokens(q, k, 2);
    EXPECT_EQ(s.values, (std::vector<double>(4, 0.0)));
    s.positions = {0, 1, 2, 3};
    EXPECT_EQ(pruner::select_top(s, 2).kept, (std::vector<std::size_t>{0, 1}));
}

TEST(RankImageTokens, ShapeMismatchThrows) {
    const auto q = num::Matrix::from_rows({{1, 0}});
    const std::vector<num::Matrix> k = {num::Matrix::from_rows({{0, 3, 1}})};
    EXPECT_THROW(pruner::rank_image_tokens(q, k, 2), ShapeError);
    EXPECT_THROW(pruner::rank_image_tokens(num::Matrix(0, 2), {}, 2), ShapeError);
}

TEST(Decide, TopTwo) {
    const auto sched = pruner::build_schedule(4, 2, 0.5, 4);
    const auto d = pruner::decide(scores_at({0.9, 0.1, 0.8, 0.2}), sched, 0);
    EXPECT_EQ(d.kept, (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(d.dropped, (std::vector<std::size_t>{1, 3}));
}

TEST(Decide, KeepAllStage) {
    const auto sched = pruner::build_schedule(4, 2, 1.0, 5);
    const auto d = pruner::decide(scores_at({3, 1, 4, 1, 5}), sched, 0);
    EXPECT_EQ(d.kept.size(), 5u);
    EXPECT_TRUE(d.dropped.empty());
}

TEST(Decide, EqualScoresKeepLowestPositions) {
    const auto sched = pruner::build_schedule(8, 2, 0.5, 576);
    const auto d = pruner::decide(scores_at(std::vector<double>(576, 0.25)), sched, 0);
    std::vector<std::size_t> expected(288);
    std::iota(expected.begin(), expected.end(), std::size_t{0});
    EXPECT_EQ(d.kept, expected);
}

TEST(Decide, MapsBackToOriginalPositions) {
    const auto sched = pruner::build_schedule(8, 2, 0.5, 4);
    const auto d = pruner::decide(scores_at({0.1, 0.7, 0.3, 0.9}, {2, 5, 9, 11}), sched, 0);
    EXPECT_EQ(d.kept, (std::vector<std::size_t>{5, 11}));
}

TEST(Decide, InvalidStageOrCountThrows) {
    const auto sched = pruner::build_schedule(8, 2, 0.5, 4);
    EXPECT_THROW(pruner::decide(scores_at({1, 2, 3, 4}), sched, 1), ConfigError);
    EXPECT_THROW(pruner::decide(scores_at({1, 2, 3}), sched, 0), ConfigError);
}

// Brute force over all permutations for V0 <= 6: relabelling tokens
// relabels the kept set identically, and a strictly increasing transform
// of the scores leaves it unchanged.
TEST(Decide, PermutationEquivarianceAndMonotoneInvariance) {
    num::Rng rng(99);
    for (std::size_t v0 = 1; v0 <= 6; ++v0) {
        for (double lambda : {0.3, 0.5, 0.75}) {
            const auto sched = pruner::build_schedule(8, 2, lambda, v0);
            std::vector<double> base(v0);
            for (double& x : base) {
                x = rng.normal();
            }
            const auto reference = pruner::decide(scores_at(base), sched, 0);

            std::vector<std::size_t> perm(v0);
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            do {
                // Token i of the base set now sits at slot perm[i].
                std::vector<double> permuted(v0);
                for (std::size_t i = 0; i < v0; ++i) {
                    permuted[perm[i]] = base[i];
                }
                std::vector<std::size_t> expected;
                for (std::size_t p : reference.kept) {
                    expected.push_back(perm[p]);
                }
                std::sort(expected.begin(), expected.end());
                ASSERT_EQ(pruner::decide(scores_at(permuted), sched, 0).kept, expected);
            } while (std::next_permutation(perm.begin(), perm.end()));

            std::vector<double> transformed(v0);
            for (std::size_t i = 0; i < v0; ++i) {
                transformed[i] = std::exp(3.0 * base[i]) + 7.0;
            }
            EXPECT_EQ(pruner::decide(scores_at(transformed), sched, 0).kept, reference.kept);
        }
    }
}

TEST(SelectRandom, DeterministicAndPartitioning) {
    const std::vector<std::size_t> pos = {3, 4, 8, 10, 12, 20};
    num::Rng a(5);
    num::Rng b(5);
    const auto da = pruner::select_random(pos, 3, a);
    EXPECT_EQ(da.kept, pruner::select_random(pos, 3, b).kept);
    EXPECT_EQ(da.kept.size(), 3u);
    std::vector<std::size_t> all = da.kept;
    all.insert(all.end(), da.dropped.begin(), da.dropped.end());
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, pos);
}

TEST(SelectRandom, InclusionFrequencyIsUniform) {
    const std::vector<std::size_t> pos = {0, 1, 2, 3, 4, 5, 6, 7};
    std::vector<int> hits(8, 0);
    num::Rng rng(12);
    const int trials = 20000;
    for (int t = 0; t < trials; ++t) {
        for (std::size_t p : pruner::select_random(pos, 2, rng).kept) {
            ++hits[p];
        }
    }
    for (int h : hits) {
        // p = 1/4, sd of the frequency ~ 0.003
        EXPECT_NEAR(static_cast<double>(h) / trials, 0.25, 0.015);
    }
}

TEST(ApplyStrategy, SingleEarlyDropAverages306) {
    const auto c = pruner::apply_strategy(pruner::SingleEarlyDrop{2, 0.5}, 32, 576);
    ASSERT_EQ(c.size(), 32u);
    EXPECT_EQ(c[0], 576u);
    EXPECT_EQ(c[1], 576u);
    EXPECT_TRUE(std::all_of(c.begin() + 2, c.end(), [](std::size_t x) { return x == 288; }));
    EXPECT_DOUBLE_EQ(mean(c), 306.0);
}

TEST(ApplyStrategy, PyramidDropAverages270) {
    EXPECT_DOUBLE_EQ(mean(pruner::apply_strategy(pruner::PyramidDrop{4, 0.5}, 32, 576)), 270.0);
}

TEST(ApplyStrategy, VanillaIsConstant) {
    const auto c = pruner::apply_strategy(pruner::Vanilla{}, 32, 576);
    EXPECT_DOUBLE_EQ(mean(c), 576.0);
    EXPECT_EQ(c, std::vector<std::size_t>(32, 576));
}

TEST(ApplyStrategy, UniformAndRandomCounts) {
    EXPECT_EQ(pruner::apply_strategy(pruner::UniformCompression{288}, 32, 576), std::vector<std::size_t>(32, 288));
    EXPECT_EQ(pruner::apply_strategy(pruner::RandomDrop{4, 0.5, 1}, 32, 576),
              pruner::apply_strategy(pruner::PyramidDrop{4, 0.5}, 32, 576));
}

TEST(ApplyStrategy, InvalidParametersThrow) {
    EXPECT_THROW(pruner::apply_strategy(pruner::SingleEarlyDrop{32, 0.5}, 32, 576), ConfigError);
    EXPECT_THROW(pruner::apply_strategy(pruner::SingleEarlyDrop{0, 0.5}, 32, 576), ConfigError);
    EXPECT_THROW(pruner::apply_strategy(pruner::SingleEarlyDrop{2, 1.5}, 32, 576), ConfigError);
    EXPECT_THROW(pruner::apply_strategy(pruner::PyramidDrop{4, 0.0}, 32, 576), ConfigError);
    EXPECT_THROW(pruner::apply_strategy(pruner::UniformCompression{600}, 32, 576), ConfigError);
}

TEST(KeepCount, FloorsWithoutRepresentationSurprises) {
    EXPECT_EQ(pruner::keep_count(0.1, 64), 6u);
    EXPECT_EQ(pruner::keep_count(0.29, 100), 29u);
    EXPECT_EQ(pruner::keep_count(1.0, 64), 64u);
    EXPECT_EQ(pruner::keep_count(0.0, 64), 0u);
}
