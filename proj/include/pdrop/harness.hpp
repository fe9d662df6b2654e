#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pdrop/costmodel.hpp"
#include "pdrop/layout.hpp"
#include "pdrop/pruner.hpp"
#include "pdrop/toymodel.hpp"

namespace pdrop::harness {

/// A sequence plus the image positions planted as instruction-relevant.
struct Fixture {
    layout::MultimodalSequence sequence;
    std::vector<std::size_t> marked;
};

/// `image_tokens` images with N(0, 0.02^2) noise; the `marked` ones (chosen
/// at random) carry 1.0 in every marker dim, the rest 0.0 there. Text ids are
/// uniform over the vocabulary.
Fixture make_marker_fixture(const model::ModelConfig& cfg, std::size_t image_tokens, std::size_t marked,
                            std::size_t instruction_length, std::size_t answer_length,
                            std::span<const std::size_t> marker_dims, std::uint64_t seed);

enum class WeightsKind { Marker, Random, File };

struct ExperimentSpec {
    model::ModelConfig model;
    std::uint64_t seed = 0;

    WeightsKind weights = WeightsKind::Marker;
    std::filesystem::path weights_path;
    std::vector<std::size_t> marker_dims = {1, 2, 3};
    std::size_t marker_onset = 1;

    std::optional<std::filesystem::path> fixture_path;
    std::size_t image_tokens = 64;
    std::size_t marked = 4;
    std::size_t instruction_length = 4;
    std::size_t answer_length = 0;

    std::string strategy = "pdrop";
    std::vector<std::string> strategies = {"vanilla", "pdrop"};
    pruner::PyramidDrop pdrop;
    pruner::SingleEarlyDrop fastv;
    /// Defaults to half the image tokens.
    std::optional<std::size_t> qformer_tokens;

    std::vector<std::size_t> sweep_layers = {2};
    std::vector<double> sweep_ratios = {1.0};
    /// Fixtures averaged per sweep cell.
    std::size_t sweep_fixtures = 1;

    /// Cost geometry; 0 means "use the toy model's dimension".
    std::uint64_t cost_hidden = 0;
    std::uint64_t cost_ffn = 0;

    /// Throws ConfigError on empty grids or invalid model parameters.
    void validate() const;
};

/// Weights and fixture realised from a spec and a seed.
struct Experiment {
    model::DecoderWeights weights;
    Fixture fixture;
};

Experiment prepare(const ExperimentSpec& spec, std::uint64_t seed);
/// The configured fixture file, or a generated marker fixture for `seed`.
Fixture prepare_fixture(const ExperimentSpec& spec, const model::ModelConfig& cfg, std::uint64_t seed);

/// Parameterised strategy for one of: vanilla, pdrop, fastv, qformer, random.
pruner::Strategy make_strategy(const std::string& name, const ExperimentSpec& spec, std::uint64_t seed);

struct StageMask {
    std::size_t boundary = 0;
    std::vector<std::size_t> kept;
};

struct RunReport {
    std::string strategy;
    std::vector<StageMask> stages;
    double recall = 1.0;
    cost::CostReport cost;
    std::string digest;
};

struct SweepRow {
    std::size_t layer = 0;
    double keep_ratio = 0.0;
    double recall = 0.0;
    std::size_t kept_count = 0;
    cost::Flops flops = 0;
};

/// Fraction of `marked` among the image tokens alive at the end (1 if none marked).
double marker_recall(const model::ForwardTrace& trace, std::span<const std::size_t> marked);

/// FNV-1a over the bit patterns of the final hidden states, as 16 hex digits.
std::string trace_digest(const model::ForwardTrace& trace);

/// Runs one strategy on a prepared experiment.
RunReport run_strategy(const ExperimentSpec& spec, const model::DecoderWeights& weights, const Fixture& fixture,
                       const pruner::Strategy& strategy);
RunReport run_strategy(const ExperimentSpec& spec, const Experiment& exp, const pruner::Strategy& strategy);

/// The configured `strategy` at `seed`.
RunReport run_single(const ExperimentSpec& spec, std::uint64_t seed);

/// Every configured strategy on the same weights, fixture and seed.
std::vector<RunReport> run_compare(const ExperimentSpec& spec);

/// Single drop after each layer in the grid keeping floor(r * V0) images by
/// the attention ranking, for each ratio r; rows in grid order. Recall is
/// averaged over `sweep_fixtures` fixtures drawn from per-fixture substreams.
std::vector<SweepRow> run_layer_sweep(const ExperimentSpec& spec);

/// Mean final-stage recall of RandomDrop (pdrop stage parameters) over
/// `trials` seeds derived from spec.seed, on one fixed experiment.
double random_drop_recall(const ExperimentSpec& spec, std::size_t trials);

/// Writes {"stages": [{"boundary": l, "kept": [...]}, ...]}. Throws
/// InputError if the report has no stage and IoError if the path is unwritable.
void emit_masks(const RunReport& report, const std::filesystem::path& path);

/// Reads a mask file; throws InputError unless the stages are nested.
std::vector<StageMask> load_masks(const std::filesystem::path& path);

/// CSV with header layer,keep_ratio,recall,kept_count,flops.
void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path);
std::string sweep_csv(std::span<const SweepRow> rows);

/// "a:b:step" (inclusive) or a comma list.
std::vector<double> parse_ratio_grid(const std::string& text);
std::vector<std::size_t> parse_layer_list(const std::string& text);

}  // namespace pdrop::harness
