#include "pdrop/toymodel.hpp"

#include <algorithm>
#include <string>

#include "pdrop/errors.hpp"

namespace pdrop::model {

namespace {

void expect_shape(const num::Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
    if (m.rows() != rows || m.cols() != cols) {
        throw ConfigError(std::string(name) + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                          ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
    }
}

constexpr double kPreOnsetStddev = 0.25;

}  // namespace

void ModelConfig::validate() const {
    if (num_layers == 0 || hidden_size == 0 || num_heads == 0 || head_dim == 0 || ffn_intermediate == 0 ||
        vocab_size == 0 || max_positions == 0) {
        throw ConfigError("model dimensions must all be positive");
    }
    if (hidden_size != num_heads * head_dim) {
        throw ConfigError("hidden_size " + std::to_string(hidden_size) + " != num_heads * head_dim (" +
                          std::to_string(num_heads) + " * " + std::to_string(head_dim) + ")");
    }
    if (head_dim % 2 != 0) {
        throw ConfigError("head_dim must be even for rotary positions");
    }
    if (!(rope_theta > 0.0) || !(rmsnorm_eps > 0.0)) {
        throw ConfigError("rope_theta and rmsnorm_eps must be positive");
    }
}

void DecoderWeights::validate() const {
    config.validate();
    const std::size_t d = config.hidden_size;
    const std::size_t m = config.ffn_intermediate;
    expect_shape(embedding, config.vocab_size, d, "embedding");
    expect_shape(lm_head, d, config.vocab_size, "lm_head");
    if (layers.size() != config.num_layers) {
        throw ConfigError("weights hold " + std::to_string(layers.size()) + " layers, config says " +
                          std::to_string(config.num_layers));
    }
    for (const LayerWeights& l : layers) {
        expect_shape(l.w_q, d, d, "w_q");
        expect_shape(l.w_k, d, d, "w_k");
        expect_shape(l.w_v, d, d, "w_v");
        expect_shape(l.w_o, d, d, "w_o");
        expect_shape(l.w_gate, d, m, "w_gate");
        expect_shape(l.w_up, d, m, "w_up");
        expect_shape(l.w_down, m, d, "w_down");
        if (l.attn_norm.size() != d || l.ffn_norm.size() != d) {
            throw ConfigError("norm gain length must equal hidden_size");
        }
    }
}

DecoderWeights init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t d = cfg.hidden_size;
    const std::size_t m = cfg.ffn_intermediate;
    num::Rng rng(seed);

    DecoderWeights w;
    w.config = cfg;
    w.embedding = num::gaussian_init(rng, cfg.vocab_size, d, kInitStddev);
    w.layers.reserve(cfg.num_layers);
    for (std::size_t j = 0; j < cfg.num_layers; ++j) {
        LayerWeights l;
        l.w_q = num::gaussian_init(rng, d, d, kInitStddev);
        l.w_k = num::gaussian_init(rng, d, d, kInitStddev);
        l.w_v = num::gaussian_init(rng, d, d, kInitStddev);
        l.w_o = num::gaussian_init(rng, d, d, kInitStddev);
        l.w_gate = num::gaussian_init(rng, d, m, kInitStddev);
        l.w_up = num::gaussian_init(rng, d, m, kInitStddev);
        l.w_down = num::gaussian_init(rng, m, d, kInitStddev);
        l.attn_norm.assign(d, 1.0);
        l.ffn_norm.assign(d, 1.0);
        w.layers.push_back(std::move(l));
    }
    w.lm_head = num::gaussian_init(rng, d, cfg.vocab_size, kInitStddev);
    return w;
}

DecoderWeights build_marker_model(const ModelConfig& cfg, std::span<const std::size_t> marker_dims,
                                  const MarkerOptions& options) {
    cfg.validate();
    const std::size_t d = cfg.hidden_size;
    const std::size_t m = cfg.ffn_intermediate;
    if (marker_dims.empty()) {
        throw ConfigError("marker subspace must not be empty");
    }
    std::vector<bool> is_marker(d, false);
    for (std::size_t dim : marker_dims) {
        if (dim >= d) {
            throw ConfigError("marker dim " + std::to_string(dim) + " outside hidden size");
        }
        is_marker[dim] = true;
    }
    std::size_t query_dim = d;
    if (options.query_dim) {
        query_dim = *options.query_dim;
    } else {
        const auto it = std::find(is_marker.begin(), is_marker.end(), false);
        query_dim = static_cast<std::size_t>(it - is_marker.begin());
    }
    if (query_dim >= d || is_marker[query_dim]) {
        throw ConfigError("query dim must be a hidden dim outside the marker subspace");
    }
    if (options.onset_layer == 0 || options.onset_layer > cfg.num_layers) {
        throw ConfigError("marker onset layer must lie in [1, " + std::to_string(cfg.num_layers) + "]");
    }

    num::Rng rng(options.seed);
    DecoderWeights w;
    w.config = cfg;
    w.embedding = num::gaussian_init(rng, cfg.vocab_size, d, kInitStddev);
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
        w.embedding(v, query_dim) = 1.0;
    }

    // Head 0 occupies columns [0, head_dim); its last rotary pair turns
    // slowest, so the planted logit barely depends on relative position.
    const std::size_t signal_col = cfg.head_dim - 2;
    for (std::size_t j = 1; j <= cfg.num_layers; ++j) {
        LayerWeights l;
        l.w_q = num::Matrix(d, d);
        l.w_k = num::Matrix(d, d);
        if (j >= options.onset_layer) {
            l.w_q(query_dim, signal_col) = 1.0;
            for (std::size_t dim : marker_dims) {
                l.w_k(dim, signal_col) = 1.0;
            }
        } else {
            for (std::size_t r = 0; r < d; ++r) {
                for (std::size_t c = 0; c < cfg.head_dim; ++c) {
                    l.w_q(r, c) = kPreOnsetStddev * rng.normal();
                    const double key = kPreOnsetStddev * rng.normal();
                    l.w_k(r, c) = is_marker[r] ? 0.0 : key;
                }
            }
        }
        l.w_v = num::Matrix(d, d);
        l.w_o = num::Matrix(d, d);
        l.w_gate = num::gaussian_init(rng, d, m, kInitStddev);
        l.w_up = num::gaussian_init(rng, d, m, kInitStddev);
        l.w_down = num::Matrix(m, d);
        l.attn_norm.assign(d, 1.0);
        l.ffn_norm.assign(d, 1.0);
        w.layers.push_back(std::move(l));
    }
    w.lm_head = num::gaussian_init(rng, d, cfg.vocab_size, kInitStddev);
    return w;
}

Ranker attention_ranker() {
    return [](const BoundaryState& state) { return pruner::select_top(*state.scores, state.keep); };
}

Ranker random_ranker(std::uint64_t seed) {
    return [seed](const BoundaryState& state) {
        num::Rng rng = num::Rng::substream(seed, state.event);
        return pruner::select_random(state.scores->positions, state.keep, rng, state.layer);
    };
}

std::span<const double> ForwardTrace::logits_at(std::size_t position) const {
    const auto it = std::find(final_positions.begin(), final_positions.end(), position);
    if (it == final_positions.end()) {
        throw BoundsError("no surviving token at position " + std::to_string(position));
    }
    return logits.row(static_cast<std::size_t>(it - final_positions.begin()));
}

}  // namespace pdrop::model
