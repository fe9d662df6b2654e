#include "pdrop/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pdrop/errors.hpp"

namespace pdrop::pruner {

namespace {

// Absorbs representation error in products such as 0.6 * 2880 so that an
// exact integer is not pushed to the next one by ceil/floor.
constexpr double kRoundingSlack = 1e-9;

void check_ratio(double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) {
        throw ConfigError("keep ratio must lie in (0, 1], got " + std::to_string(ratio));
    }
}

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

std::size_t next_stage_count(std::size_t count, double ratio) {
    check_ratio(ratio);
    const double drop = std::ceil((1.0 - ratio) * static_cast<double>(count) - kRoundingSlack);
    const auto dropped = static_cast<std::size_t>(std::max(0.0, drop));
    return count - std::min(dropped, count);
}

StageSchedule build_schedule(std::size_t num_layers, std::size_t num_stages, double ratio,
                             std::size_t initial_tokens) {
    if (num_stages == 0 || num_stages > num_layers) {
        throw ConfigError("stage count must lie in [1, " + std::to_string(num_layers) + "], got " +
                          std::to_string(num_stages));
    }
    check_ratio(ratio);

    StageSchedule s;
    s.num_layers = num_layers;
    s.num_stages = num_stages;
    s.ratio = ratio;
    const std::size_t base = num_layers / num_stages;
    s.stage_layer_counts.assign(num_stages, base);
    s.stage_layer_counts.back() += num_layers - base * num_stages;

    std::size_t layer = 0;
    for (std::size_t st = 0; st + 1 < num_stages; ++st) {
        layer += s.stage_layer_counts[st];
        s.boundary_layers.push_back(layer);
    }

    s.stage_token_counts.push_back(initial_tokens);
    for (std::size_t st = 1; st < num_stages; ++st) {
        s.stage_token_counts.push_back(next_stage_count(s.stage_token_counts.back(), ratio));
    }
    return s;
}

std::vector<DropEvent> drop_events(const StageSchedule& schedule) {
    std::vector<DropEvent> out;
    for (std::size_t i = 0; i < schedule.boundary_layers.size(); ++i) {
        out.push_back({schedule.boundary_layers[i], schedule.stage_token_counts[i + 1]});
    }
    return out;
}

SimilarityScores rank_image_tokens(const num::Matrix& q_last, std::span<const num::Matrix> k_image,
                                   std::size_t head_dim) {
    const std::size_t heads = q_last.rows();
    if (heads == 0) {
        throw ShapeError("rank_image_tokens: need at least one head");
    }
    if (q_last.cols() != head_dim || k_image.size() != heads) {
        throw ShapeError("rank_image_tokens: query is " + std::to_string(q_last.rows()) + "x" +
                         std::to_string(q_last.cols()) + ", expected " + std::to_string(k_image.size()) + "x" +
                         std::to_string(head_dim));
    }
    const std::size_t tokens = k_image[0].rows();
    for (const auto& k : k_image) {
        if (k.cols() != head_dim || k.rows() != tokens) {
            throw ShapeError("rank_image_tokens: key matrices disagree in shape");
        }
    }

    SimilarityScores out;
    out.values.assign(tokens, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t t = 0; t < tokens; ++t) {
            out.values[t] += num::dot(q_last.row(h), k_image[h].row(t)) * scale;
        }
    }
    for (double& v : out.values) {
        v /= static_cast<double>(heads);
    }
    return out;
}

PruneDecision select_top(const SimilarityScores& scores, std::size_t keep) {
    if (scores.positions.size() != scores.values.size()) {
        throw ShapeError("similarity scores and positions differ in length");
    }
    PruneDecision d;
    d.boundary_layer = scores.boundary_layer;
    const auto top = num::arg_topk(scores.values, keep);
    std::vector<bool> is_kept(scores.values.size(), false);
    for (std::size_t i : top) {
        is_kept[i] = true;
    }
    for (std::size_t i = 0; i < scores.values.size(); ++i) {
        (is_kept[i] ? d.kept : d.dropped).push_back(scores.positions[i]);
    }
    std::sort(d.kept.begin(), d.kept.end());
    std::sort(d.dropped.begin(), d.dropped.end());
    return d;
}

PruneDecision decide(const SimilarityScores& scores, const StageSchedule& schedule, std::size_t stage) {
    if (stage + 1 >= schedule.num_stages) {
        throw ConfigError("stage " + std::to_string(stage) + " has no drop boundary");
    }
    if (scores.values.size() != schedule.stage_token_counts[stage]) {
        throw ConfigError("got " + std::to_string(scores.values.size()) + " scores, schedule expects " +
                          std::to_string(schedule.stage_token_counts[stage]));
    }
    return select_top(scores, schedule.stage_token_counts[stage + 1]);
}

PruneDecision select_random(std::span<const std::size_t> positions, std::size_t keep, num::Rng& rng,
                            std::size_t boundary_layer) {
    if (keep > positions.size()) {
        throw BoundsError("select_random: keep exceeds candidate count");
    }
    std::vector<std::size_t> pool(positions.begin(), positions.end());
    for (std::size_t i = 0; i < keep; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    PruneDecision d;
    d.boundary_layer = boundary_layer;
    d.kept.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep));
    d.dropped.assign(pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end());
    std::sort(d.kept.begin(), d.kept.end());
    std::sort(d.dropped.begin(), d.dropped.end());
    return d;
}

std::string strategy_name(const Strategy& strategy) {
    return std::visit(overloaded{
                          [](const Vanilla&) { return std::string("vanilla"); },
                          [](const PyramidDrop&) { return std::string("pdrop"); },
                          [](const SingleEarlyDrop&) { return std::string("fastv"); },
                          [](const UniformCompression&) { return std::string("qformer"); },
                          [](const RandomDrop&) { return std::string("random"); },
                      },
                      strategy);
}

std::size_t keep_count(double ratio, std::size_t count) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(count) + kRoundingSlack));
}

void validate_strategy(const Strategy& strategy, std::size_t num_layers, std::size_t initial_tokens) {
    if (num_layers == 0) {
        throw ConfigError("layer count must be positive");
    }
    std::visit(overloaded{
                   [](const Vanilla&) {},
                   [&](const PyramidDrop& p) { build_schedule(num_layers, p.stages, p.ratio, initial_tokens); },
                   [&](const RandomDrop& p) { build_schedule(num_layers, p.stages, p.ratio, initial_tokens); },
                   [&](const SingleEarlyDrop& p) {
                       if (p.layer == 0 || p.layer >= num_layers) {
                           throw ConfigError("early-drop layer must lie in [1, " + std::to_string(num_layers - 1) +
                                             "], got " + std::to_string(p.layer));
                       }
                       if (!(p.keep_ratio >= 0.0 && p.keep_ratio <= 1.0)) {
                           throw ConfigError("early-drop keep ratio must lie in [0, 1]");
                       }
                   },
                   [&](const UniformCompression& p) {
                       if (p.tokens > initial_tokens) {
                           throw ConfigError("uniform compression cannot exceed the input token count");
                       }
                   },
               },
               strategy);
}

std::vector<std::size_t> apply_strategy(const Strategy& strategy, std::size_t num_layers,
                                        std::size_t initial_tokens) {
    validate_strategy(strategy, num_layers, initial_tokens);
    if (const auto* u = std::get_if<UniformCompression>(&strategy)) {
        return std::vector<std::size_t>(num_layers, u->tokens);
    }
    std::vector<std::size_t> counts(num_layers, initial_tokens);
    for (const DropEvent& e : strategy_drop_events(strategy, num_layers, initial_tokens)) {
        std::fill(counts.begin() + static_cast<std::ptrdiff_t>(e.after_layer), counts.end(), e.keep);
    }
    return counts;
}

std::vector<DropEvent> strategy_drop_events(const Strategy& strategy, std::size_t num_layers,
                                            std::size_t initial_tokens) {
    validate_strategy(strategy, num_layers, initial_tokens);
    return std::visit(overloaded{
                          [](const Vanilla&) { return std::vector<DropEvent>{}; },
                          [](const UniformCompression&) { return std::vector<DropEvent>{}; },
                          [&](const PyramidDrop& p) {
                              return drop_events(build_schedule(num_layers, p.stages, p.ratio, initial_tokens));
                          },
                          [&](const RandomDrop& p) {
                              return drop_events(build_schedule(num_layers, p.stages, p.ratio, initial_tokens));
                          },
                          [&](const SingleEarlyDrop& p) {
                              return std::vector<DropEvent>{{p.layer, keep_count(p.keep_ratio, initial_tokens)}};
                          },
                      },
                      strategy);
}

}  // namespace pdrop::pruner
