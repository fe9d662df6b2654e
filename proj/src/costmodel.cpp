#include "pdrop/costmodel.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "pdrop/errors.hpp"

namespace pdrop::cost {

Flops layer_flops(std::uint64_t n, std::uint64_t d, std::uint64_t m) noexcept {
    return 4 * n * d * d + 2 * n * n * d + 3 * n * d * m;
}

CostReport staged_flops(std::span<const std::size_t> stage_layers, std::span<const std::size_t> stage_tokens,
                        std::uint64_t d, std::uint64_t m) {
    const std::size_t vanilla_tokens = stage_tokens.empty() ? 0 : stage_tokens.front();
    return staged_flops(stage_layers, stage_tokens, d, m, vanilla_tokens);
}

CostReport staged_flops(std::span<const std::size_t> stage_layers, std::span<const std::size_t> stage_tokens,
                        std::uint64_t d, std::uint64_t m, std::size_t vanilla_tokens) {
    if (stage_layers.size() != stage_tokens.size()) {
        throw ConfigError("staged_flops: " + std::to_string(stage_layers.size()) + " layer counts vs " +
                          std::to_string(stage_tokens.size()) + " token counts");
    }
    CostReport r;
    r.stage_layers.assign(stage_layers.begin(), stage_layers.end());
    r.stage_tokens.assign(stage_tokens.begin(), stage_tokens.end());
    std::size_t layers = 0;
    std::uint64_t token_layers = 0;
    for (std::size_t s = 0; s < stage_layers.size(); ++s) {
        const Flops f = stage_layers[s] * layer_flops(stage_tokens[s], d, m);
        r.per_stage.push_back(f);
        r.total += f;
        layers += stage_layers[s];
        token_layers += static_cast<std::uint64_t>(stage_layers[s]) * stage_tokens[s];
    }
    r.vanilla = layers * layer_flops(vanilla_tokens, d, m);
    r.ratio = r.vanilla == 0 ? 1.0 : static_cast<double>(r.total) / static_cast<double>(r.vanilla);
    r.avg_tokens = layers == 0 ? 0.0 : static_cast<double>(token_layers) / static_cast<double>(layers);
    return r;
}

CostReport staged_flops(const pruner::StageSchedule& schedule, std::uint64_t d, std::uint64_t m) {
    return staged_flops(schedule.stage_layer_counts, schedule.stage_token_counts, d, m);
}

double theoretical_saving(double ratio, std::size_t stages) {
    if (!(ratio > 0.0 && ratio <= 1.0) || stages == 0) {
        throw ConfigError("theoretical_saving needs ratio in (0, 1] and at least one stage");
    }
    if (ratio == 1.0) {
        return 1.0;
    }
    const double s = static_cast<double>(stages);
    return (1.0 - std::pow(ratio, s)) / (s * (1.0 - ratio));
}

CostReport strategy_cost(const pruner::Strategy& strategy, std::size_t num_layers, std::size_t initial_tokens,
                         std::uint64_t d, std::uint64_t m) {
    const auto per_layer = pruner::apply_strategy(strategy, num_layers, initial_tokens);
    std::vector<std::size_t> layers;
    std::vector<std::size_t> tokens;
    for (std::size_t count : per_layer) {
        if (!tokens.empty() && tokens.back() == count) {
            ++layers.back();
        } else {
            layers.push_back(1);
            tokens.push_back(count);
        }
    }
    return staged_flops(layers, tokens, d, m, initial_tokens);
}

double round_significant(double x, int digits) {
    if (x == 0.0 || !std::isfinite(x)) {
        return x;
    }
    const double magnitude = std::floor(std::log10(std::fabs(x)));
    const double scale = std::pow(10.0, static_cast<double>(digits - 1) - magnitude);
    return std::round(x * scale) / scale;
}

double tera_rounded(Flops flops, int digits) {
    return round_significant(static_cast<double>(flops) / 1e12, digits);
}

}  // namespace pdrop::cost
