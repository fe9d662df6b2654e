#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pdrop/pruner.hpp"

namespace pdrop::cost {

using Flops = std::uint64_t;

/// Image-token FLOPs of one decoder layer: 4nd^2 + 2n^2d + 3ndm.
/// The 3ndm term counts the three FFN projections (gate, up, down).
Flops layer_flops(std::uint64_t n, std::uint64_t d, std::uint64_t m) noexcept;

struct CostReport {
    std::vector<Flops> per_stage;
    std::vector<std::size_t> stage_layers;
    std::vector<std::size_t> stage_tokens;
    Flops total = 0;
    Flops vanilla = 0;
    double ratio = 1.0;
    double avg_tokens = 0.0;
};

/// sum_s K_s * layer_flops(n_s). The vanilla reference runs all layers at
/// `vanilla_tokens` (defaults to the first stage's count).
CostReport staged_flops(std::span<const std::size_t> stage_layers, std::span<const std::size_t> stage_tokens,
                        std::uint64_t d, std::uint64_t m);
CostReport staged_flops(std::span<const std::size_t> stage_layers, std::span<const std::size_t> stage_tokens,
                        std::uint64_t d, std::uint64_t m, std::size_t vanilla_tokens);
CostReport staged_flops(const pruner::StageSchedule& schedule, std::uint64_t d, std::uint64_t m);

/// Cost fraction (1 - l^S) / (S (1 - l)) of the linear-cost model; 1 at l == 1.
double theoretical_saving(double ratio, std::size_t stages);

/// Per-layer counts from apply_strategy, grouped into runs of equal count.
CostReport strategy_cost(const pruner::Strategy& strategy, std::size_t num_layers, std::size_t initial_tokens,
                         std::uint64_t d, std::uint64_t m);

/// FLOPs -> TFLOPs rounded to `digits` significant figures.
double tera_rounded(Flops flops, int digits = 3);
double round_significant(double x, int digits);

}  // namespace pdrop::cost
