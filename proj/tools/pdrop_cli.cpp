// pdrop: staged visual-token pruning cost model, schedules and toy-decoder experiments.
//
// Exit codes: 0 success, 2 configuration error, 3 I/O error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "pdrop/costmodel.hpp"
#include "pdrop/errors.hpp"
#include "pdrop/harness.hpp"
#include "pdrop/pruner.hpp"
#include "pdrop/report_json.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

std::vector<std::string> split_names(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ',');) {
        if (!p.empty()) {
            out.push_back(p);
        }
    }
    return out;
}

void print_or_write(const pdrop::io::Json& j, const std::string& out) {
    if (out.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        pdrop::io::write_json_file(j, out);
    }
}

}  // namespace

int main(int argc, char** argv) {
    using namespace pdrop;

    CLI::App app{"Staged image-token pruning: cost model, schedules and toy-decoder experiments"};
    app.require_subcommand(1);

    // cost
    auto* cost_cmd = app.add_subcommand("cost", "Image-token FLOPs of a strategy as CostReport JSON");
    std::size_t n = 0;
    std::size_t layers = 0;
    std::uint64_t d = 0;
    std::uint64_t m = 0;
    std::optional<double> lambda;
    std::optional<std::size_t> stages;
    std::string strategy_name;
    std::size_t fastv_layer = 2;
    double keep_ratio = 0.5;
    std::optional<std::size_t> compress_tokens;
    cost_cmd->add_option("--n", n, "Initial image tokens V0")->required();
    cost_cmd->add_option("--layers", layers, "Decoder layers J")->required();
    cost_cmd->add_option("--d", d, "Hidden size")->required();
    cost_cmd->add_option("--m", m, "FFN intermediate size")->required();
    cost_cmd->add_option("--lambda", lambda, "Keep ratio per stage (pyramid drop)");
    cost_cmd->add_option("--stages", stages, "Stage count (pyramid drop)");
    cost_cmd->add_option("--strategy", strategy_name, "vanilla | pdrop | fastv | qformer | random");
    cost_cmd->add_option("--fastv-layer", fastv_layer, "Early-drop layer for fastv");
    cost_cmd->add_option("--keep-ratio", keep_ratio, "Early-drop keep ratio for fastv");
    cost_cmd->add_option("--tokens", compress_tokens, "Constant token count for qformer");

    // schedule
    auto* sched_cmd = app.add_subcommand("schedule", "Stage schedule as JSON");
    std::size_t sched_layers = 0;
    std::size_t sched_stages = 0;
    double sched_lambda = 0.5;
    std::size_t sched_tokens = 0;
    sched_cmd->add_option("--layers", sched_layers, "Decoder layers J")->required();
    sched_cmd->add_option("--stages", sched_stages, "Stage count S")->required();
    sched_cmd->add_option("--lambda", sched_lambda, "Keep ratio")->required();
    sched_cmd->add_option("--tokens", sched_tokens, "Initial image tokens V0")->required();

    // run / sweep / compare / init-weights share --config
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_path;

    auto* run_cmd = app.add_subcommand("run", "Run the configured strategy; RunReport JSON to stdout");
    std::string masks_path;
    run_cmd->add_option("--config", config_path, "Experiment config JSON")->required();
    run_cmd->add_option("--seed", seed, "Experiment seed (overrides the config)");
    run_cmd->add_option("--emit-masks", masks_path, "Write per-stage kept masks to this path");

    auto* sweep_cmd = app.add_subcommand("sweep", "Single-drop layer/ratio sweep as CSV");
    std::string sweep_layers;
    std::string sweep_ratios;
    sweep_cmd->add_option("--config", config_path, "Experiment config JSON")->required();
    sweep_cmd->add_option("--layers", sweep_layers, "Comma-separated drop layers");
    sweep_cmd->add_option("--ratios", sweep_ratios, "start:stop:step or comma list of keep ratios");
    sweep_cmd->add_option("--seed", seed, "Experiment seed (overrides the config)");
    sweep_cmd->add_option("--out", out_path, "CSV output path (stdout if omitted)");

    auto* cmp_cmd = app.add_subcommand("compare", "Run several strategies on one fixture");
    std::string cmp_strategies;
    cmp_cmd->add_option("--config", config_path, "Experiment config JSON")->required();
    cmp_cmd->add_option("--strategies", cmp_strategies, "Comma-separated strategy names");
    cmp_cmd->add_option("--seed", seed, "Experiment seed (overrides the config)");
    cmp_cmd->add_option("--out", out_path, "JSON output path (stdout if omitted)");

    auto* init_cmd = app.add_subcommand("init-weights", "Write the configured weights as a PDRW file");
    init_cmd->add_option("--config", config_path, "Experiment config JSON")->required();
    init_cmd->add_option("--seed", seed, "Experiment seed (overrides the config)");
    init_cmd->add_option("--out", out_path, "Weight file path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*cost_cmd) {
            pruner::Strategy strategy = pruner::Vanilla{};
            if (strategy_name.empty() && (lambda || stages)) {
                strategy_name = "pdrop";
            }
            const pruner::PyramidDrop pyramid{stages.value_or(4), lambda.value_or(0.5)};
            if (strategy_name.empty() || strategy_name == "vanilla") {
                strategy = pruner::Vanilla{};
            } else if (strategy_name == "pdrop") {
                strategy = pyramid;
            } else if (strategy_name == "random") {
                strategy = pruner::RandomDrop{pyramid.stages, pyramid.ratio, 0};
            } else if (strategy_name == "fastv") {
                strategy = pruner::SingleEarlyDrop{fastv_layer, keep_ratio};
            } else if (strategy_name == "qformer") {
                strategy = pruner::UniformCompression{compress_tokens.value_or(n / 2)};
            } else {
                throw ConfigError("unknown strategy '" + strategy_name + "'");
            }
            std::cout << io::to_json(cost::strategy_cost(strategy, layers, n, d, m)).dump(2) << '\n';
        } else if (*sched_cmd) {
            const auto s = pruner::build_schedule(sched_layers, sched_stages, sched_lambda, sched_tokens);
            std::cout << io::to_json(s).dump(2) << '\n';
        } else {
            harness::ExperimentSpec spec = io::load_spec(config_path);
            if (seed) {
                spec.seed = *seed;
            }
            if (*run_cmd) {
                const auto report = harness::run_single(spec, spec.seed);
                if (!masks_path.empty()) {
                    harness::emit_masks(report, masks_path);
                }
                std::cout << io::to_json(report).dump(2) << '\n';
            } else if (*sweep_cmd) {
                if (!sweep_layers.empty()) {
                    spec.sweep_layers = harness::parse_layer_list(sweep_layers);
                }
                if (!sweep_ratios.empty()) {
                    spec.sweep_ratios = harness::parse_ratio_grid(sweep_ratios);
                }
                spec.validate();
                const auto rows = harness::run_layer_sweep(spec);
                if (out_path.empty()) {
                    std::cout << harness::sweep_csv(rows);
                } else {
                    harness::write_sweep_csv(rows, out_path);
                }
            } else if (*cmp_cmd) {
                if (!cmp_strategies.empty()) {
                    spec.strategies = split_names(cmp_strategies);
                }
                spec.validate();
                io::Json reports = io::Json::array();
                for (const auto& r : harness::run_compare(spec)) {
                    reports.push_back(io::to_json(r));
                }
                print_or_write(io::Json{{"seed", spec.seed}, {"reports", reports}}, out_path);
            } else if (*init_cmd) {
                model::save_weights(harness::prepare(spec, spec.seed).weights, out_path);
            }
        }
    } catch (const IoError& e) {
        std::cerr << "pdrop: " << e.what() << '\n';
        return kExitIo;
    } catch (const Error& e) {
        std::cerr << "pdrop: " << e.what() << '\n';
        return kExitConfig;
    }
    return 0;
}
