#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "pdrop/layout.hpp"
#include "pdrop/numkernel.hpp"
#include "pdrop/pruner.hpp"

namespace pdrop::model {

struct ModelConfig {
    std::size_t num_layers = 8;
    std::size_t hidden_size = 64;
    std::size_t num_heads = 4;
    std::size_t head_dim = 16;
    std::size_t ffn_intermediate = 172;
    std::size_t vocab_size = 256;
    std::size_t max_positions = 4096;
    double rope_theta = 10000.0;
    double rmsnorm_eps = 1e-6;

    /// Throws ConfigError unless d == heads * head_dim, head_dim is even and
    /// every count is positive.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
    num::Matrix w_q;     // d x d
    num::Matrix w_k;     // d x d
    num::Matrix w_v;     // d x d
    num::Matrix w_o;     // d x d
    num::Matrix w_gate;  // d x m
    num::Matrix w_up;    // d x m
    num::Matrix w_down;  // m x d
    std::vector<double> attn_norm;
    std::vector<double> ffn_norm;

    bool operator==(const LayerWeights&) const = default;
};

struct DecoderWeights {
    ModelConfig config;
    num::Matrix embedding;  // vocab x d
    std::vector<LayerWeights> layers;
    num::Matrix lm_head;  // d x vocab

    /// Throws ConfigError if any matrix disagrees with `config`.
    void validate() const;

    bool operator==(const DecoderWeights&) const = default;
};

inline constexpr double kInitStddev = 0.02;

/// All matrices ~ N(0, 0.02^2) from one seeded stream, norm gains 1.
DecoderWeights init_model(const ModelConfig& cfg, std::uint64_t seed);

struct MarkerOptions {
    /// First layer (1-based) whose head 0 carries the planted
    /// instruction-to-marker alignment. Earlier layers rank with random
    /// head-0 projections that ignore the marker dims.
    std::size_t onset_layer = 1;
    /// Embedding dim set to 1.0 in every vocabulary row; drives the query.
    /// Defaults to the lowest dim not in the marker subspace.
    std::optional<std::size_t> query_dim;
    std::uint64_t seed = 0;
};

/// Weights whose head-0 query of any text token aligns with keys of image
/// tokens carrying energy in `marker_dims`.
///
/// Head 0 projects the query dim and the summed marker dims onto the
/// slowest-rotating rotary pair, so the pre-scaling logit between the
/// instruction query and a marked key is large and positive (far above 10 for
/// unit marker values) and exactly 0 for keys with no marker energy. Every
/// other head, every value/output projection and every W_down is zero, so the
/// hidden states never leave the embeddings. Throws ConfigError on an empty
/// or out-of-range subspace.
DecoderWeights build_marker_model(const ModelConfig& cfg, std::span<const std::size_t> marker_dims,
                                  const MarkerOptions& options = {});

/// Flat little-endian container: "PDRW", u32 version, config as i32 fields
/// (layers, hidden, heads, head_dim, ffn, vocab, max_positions), f64
/// rope_theta and eps, then every matrix in declaration order as f64.
void save_weights(const DecoderWeights& w, const std::filesystem::path& path);
DecoderWeights load_weights(const std::filesystem::path& path);

/// What the ranking sees at one boundary layer.
struct BoundaryState {
    std::size_t layer = 0;  // 1-based
    std::size_t event = 0;  // index of this drop event
    std::size_t keep = 0;
    const num::Matrix* q_last = nullptr;      // heads x head_dim, post-rotary
    std::span<const num::Matrix> k_image;     // per head: images x head_dim, post-rotary
    const pruner::SimilarityScores* scores = nullptr;
};

using Ranker = std::function<pruner::PruneDecision(const BoundaryState&)>;

/// Top-k on the last-instruction similarity scores.
Ranker attention_ranker();
/// Uniform random kept-set; substream per drop event derived from `seed`.
Ranker random_ranker(std::uint64_t seed);

struct BoundaryRecord {
    std::size_t layer = 0;
    num::Matrix q_last;
    std::vector<num::Matrix> k_image;
    pruner::SimilarityScores scores;
    pruner::PruneDecision decision;
};

/// Overwrites the output hidden state of the token at original `position`
/// after layer `layer`, before any drop at that layer is applied.
struct Injection {
    std::size_t layer = 0;
    std::size_t position = 0;
    std::vector<double> hidden;
};

struct ForwardOptions {
    bool record_attention = false;
    std::optional<Injection> injection;
};

struct ForwardTrace {
    /// hidden[j]: output of layer j+1 for the tokens that were present in it.
    std::vector<num::Matrix> hidden;
    /// positions[j]: original positions of the rows of hidden[j].
    std::vector<std::vector<std::size_t>> positions;
    std::vector<BoundaryRecord> boundaries;
    /// stage_kept[0] holds every image position; stage_kept[n] the images
    /// kept by boundary n.
    std::vector<std::vector<std::size_t>> stage_kept;
    num::Matrix logits;
    std::vector<std::size_t> final_positions;
    std::vector<layout::TokenRole> final_roles;
    /// attention[j][h]: tokens x tokens probabilities (only when recorded).
    std::vector<std::vector<num::Matrix>> attention;

    std::span<const double> logits_at(std::size_t position) const;
    const num::Matrix& final_hidden() const { return hidden.back(); }
};

/// Pre-norm causal decoder with rotary positions over the whole sequence.
/// Throws InputError on an empty sequence, a position beyond the configured
/// maximum or an embedding width other than hidden_size.
ForwardTrace forward_full(const DecoderWeights& w, const layout::MultimodalSequence& seq,
                          const ForwardOptions& options = {});

/// Runs the decoder, applying each drop event after its layer. Text tokens
/// are never removed and kept tokens retain their original positions.
ForwardTrace forward_with_drops(const DecoderWeights& w, const layout::MultimodalSequence& seq,
                                std::span<const pruner::DropEvent> events, const Ranker& ranker,
                                const ForwardOptions& options = {});

/// Throws ConfigError if the schedule was not built for this model's layer
/// count and this sequence's image count.
ForwardTrace forward_pruned(const DecoderWeights& w, const layout::MultimodalSequence& seq,
                            const pruner::StageSchedule& schedule, const Ranker& ranker,
                            const ForwardOptions& options = {});

/// forward_pruned with `injection` applied; throws ConfigError unless the
/// injection targets a boundary layer and a token alive at it.
ForwardTrace inject_at_boundary(const DecoderWeights& w, const layout::MultimodalSequence& seq,
                                const pruner::StageSchedule& schedule, const Ranker& ranker,
                                Injection injection);

}  // namespace pdrop::model
