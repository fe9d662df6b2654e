#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pdrop/numkernel.hpp"

namespace pdrop::pruner {

/// Layer partition and per-stage image-token counts of a staged drop.
///
/// Layers are 1-based. A drop happens after each layer in `boundary_layers`.
/// `stage_token_counts[s]` is the number of image tokens alive during stage s;
/// each boundary removes ceil((1 - ratio) * count) tokens.
struct StageSchedule {
    std::size_t num_layers = 0;
    std::size_t num_stages = 0;
    double ratio = 1.0;
    std::vector<std::size_t> boundary_layers;
    std::vector<std::size_t> stage_layer_counts;
    std::vector<std::size_t> stage_token_counts;

    bool operator==(const StageSchedule&) const = default;
};

/// Tokens surviving one boundary: count - ceil((1 - ratio) * count).
std::size_t next_stage_count(std::size_t count, double ratio);

/// Layers split as floor(J/S) per stage, with the remainder added to the last
/// stage. Throws ConfigError if S == 0, S > J or ratio is outside (0, 1].
StageSchedule build_schedule(std::size_t num_layers, std::size_t num_stages, double ratio,
                             std::size_t initial_tokens);

/// One physical drop: after layer `after_layer` (1-based), keep `keep` images.
struct DropEvent {
    std::size_t after_layer = 0;
    std::size_t keep = 0;

    bool operator==(const DropEvent&) const = default;
};

std::vector<DropEvent> drop_events(const StageSchedule& schedule);

struct SimilarityScores {
    std::size_t boundary_layer = 0;
    std::vector<double> values;
    /// Original position of the token each score belongs to.
    std::vector<std::size_t> positions;
};

struct PruneDecision {
    std::size_t boundary_layer = 0;
    std::vector<std::size_t> kept;
    std::vector<std::size_t> dropped;
};

/// score(token) = mean_h dot(q[h], k[h][token]) / sqrt(head_dim).
///
/// `q_last` is heads x head_dim; `k_image[h]` is tokens x head_dim. The
/// result carries no positions; callers attach them.
SimilarityScores rank_image_tokens(const num::Matrix& q_last, std::span<const num::Matrix> k_image,
                                   std::size_t head_dim);

/// Keeps the `keep` best-scoring tokens (lower position wins ties).
PruneDecision select_top(const SimilarityScores& scores, std::size_t keep);

/// Boundary `stage` of `schedule`: keeps stage_token_counts[stage + 1] tokens.
PruneDecision decide(const SimilarityScores& scores, const StageSchedule& schedule, std::size_t stage);

/// Uniformly random subset of `keep` positions; deterministic in `rng`.
PruneDecision select_random(std::span<const std::size_t> positions, std::size_t keep, num::Rng& rng,
                            std::size_t boundary_layer = 0);

struct Vanilla {};
struct PyramidDrop {
    std::size_t stages = 4;
    double ratio = 0.5;
};
/// One early drop after layer `layer`, keeping floor(keep_ratio * V0) images.
struct SingleEarlyDrop {
    std::size_t layer = 2;
    double keep_ratio = 0.5;
};
/// Constant image-token count in every layer.
struct UniformCompression {
    std::size_t tokens = 0;
};
/// PyramidDrop counts with seeded random kept-sets.
struct RandomDrop {
    std::size_t stages = 4;
    double ratio = 0.5;
    std::uint64_t seed = 0;
};

using Strategy = std::variant<Vanilla, PyramidDrop, SingleEarlyDrop, UniformCompression, RandomDrop>;

std::string strategy_name(const Strategy& strategy);

/// floor(ratio * count), tolerant of ratios like 0.3 that are not exact in binary.
std::size_t keep_count(double ratio, std::size_t count);

/// Throws ConfigError if parameters are invalid for (num_layers, initial_tokens).
void validate_strategy(const Strategy& strategy, std::size_t num_layers, std::size_t initial_tokens);

/// Image-token count alive in each of the J layers.
std::vector<std::size_t> apply_strategy(const Strategy& strategy, std::size_t num_layers,
                                        std::size_t initial_tokens);

/// Drop events realising the strategy inside the decoder. UniformCompression
/// has none: its compression happens before the first layer.
std::vector<DropEvent> strategy_drop_events(const Strategy& strategy, std::size_t num_layers,
                                            std::size_t initial_tokens);

}  // namespace pdrop::pruner
