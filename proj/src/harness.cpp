#include "pdrop/harness.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pdrop/errors.hpp"
#include "pdrop/report_json.hpp"

namespace pdrop::harness {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return num::Rng::substream(seed, stream).next_u64();
}

// Stream ids for the components drawn from one experiment seed.
enum Stream : std::uint64_t {
    kRandomWeights = 0,
    kMarkerWeights = 1,
    kFixture = 2,
    kRandomStrategy = 3,
    kSweepFixtureBase = 1000,
    kRandomTrialBase = 1u << 20,
};

std::vector<std::size_t> evenly_spaced(std::span<const std::size_t> positions, std::size_t count) {
    std::vector<std::size_t> out;
    const double step = static_cast<double>(positions.size()) / static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(positions[static_cast<std::size_t>((static_cast<double>(i) + 0.5) * step)]);
    }
    return out;
}

std::string format_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

Fixture make_marker_fixture(const model::ModelConfig& cfg, std::size_t image_tokens, std::size_t marked,
                            std::size_t instruction_length, std::size_t answer_length,
                            std::span<const std::size_t> marker_dims, std::uint64_t seed) {
    if (marked > image_tokens) {
        throw ConfigError("cannot mark more tokens than there are images");
    }
    for (std::size_t dim : marker_dims) {
        if (dim >= cfg.hidden_size) {
            throw ConfigError("marker dim outside hidden size");
        }
    }
    num::Rng rng(seed);
    num::Matrix images = num::gaussian_init(rng, image_tokens, cfg.hidden_size, model::kInitStddev);

    std::vector<std::size_t> pool(image_tokens);
    for (std::size_t i = 0; i < image_tokens; ++i) {
        pool[i] = i;
    }
    const auto pick = pruner::select_random(pool, marked, rng);
    for (std::size_t r = 0; r < image_tokens; ++r) {
        for (std::size_t dim : marker_dims) {
            images(r, dim) = 0.0;
        }
    }
    for (std::size_t r : pick.kept) {
        for (std::size_t dim : marker_dims) {
            images(r, dim) = 1.0;
        }
    }

    auto draw_ids = [&](std::size_t n) {
        std::vector<std::int64_t> ids(n);
        for (auto& id : ids) {
            id = static_cast<std::int64_t>(rng.below(cfg.vocab_size));
        }
        return ids;
    };
    const auto instruction = draw_ids(instruction_length);
    const auto answer = draw_ids(answer_length);
    return Fixture{layout::build_sequence(std::move(images), instruction, answer), pick.kept};
}

void ExperimentSpec::validate() const {
    model.validate();
    if (strategies.empty()) {
        throw ConfigError("strategy list must not be empty");
    }
    if (sweep_layers.empty() || sweep_ratios.empty()) {
        throw ConfigError("sweep grids must not be empty");
    }
    if (sweep_fixtures == 0) {
        throw ConfigError("sweep needs at least one fixture");
    }
    for (double r : sweep_ratios) {
        if (!(r >= 0.0 && r <= 1.0)) {
            throw ConfigError("sweep keep ratios must lie in [0, 1]");
        }
    }
    if (weights == WeightsKind::Marker && marker_dims.empty()) {
        throw ConfigError("marker model needs at least one marker dim");
    }
}

Experiment prepare(const ExperimentSpec& spec, std::uint64_t seed) {
    spec.validate();
    model::DecoderWeights weights;
    switch (spec.weights) {
        case WeightsKind::Marker: {
            model::MarkerOptions opts;
            opts.onset_layer = spec.marker_onset;
            opts.seed = derive_seed(seed, kMarkerWeights);
            weights = model::build_marker_model(spec.model, spec.marker_dims, opts);
            break;
        }
        case WeightsKind::Random:
            weights = model::init_model(spec.model, derive_seed(seed, kRandomWeights));
            break;
        case WeightsKind::File:
            weights = model::load_weights(spec.weights_path);
            break;
    }
    Fixture fixture = prepare_fixture(spec, weights.config, seed);
    return Experiment{std::move(weights), std::move(fixture)};
}

Fixture prepare_fixture(const ExperimentSpec& spec, const model::ModelConfig& cfg, std::uint64_t seed) {
    if (spec.fixture_path) {
        return io::load_fixture(*spec.fixture_path);
    }
    return make_marker_fixture(cfg, spec.image_tokens, spec.marked, spec.instruction_length, spec.answer_length,
                               spec.marker_dims, derive_seed(seed, kFixture));
}

pruner::Strategy make_strategy(const std::string& name, const ExperimentSpec& spec, std::uint64_t seed) {
    if (name == "vanilla") {
        return pruner::Vanilla{};
    }
    if (name == "pdrop") {
        return spec.pdrop;
    }
    if (name == "fastv") {
        return spec.fastv;
    }
    if (name == "qformer") {
        return pruner::UniformCompression{spec.qformer_tokens.value_or(spec.image_tokens / 2)};
    }
    if (name == "random") {
        return pruner::RandomDrop{spec.pdrop.stages, spec.pdrop.ratio, derive_seed(seed, kRandomStrategy)};
    }
    throw ConfigError("unknown strategy '" + name + "' (expected vanilla, pdrop, fastv, qformer or random)");
}

double marker_recall(const model::ForwardTrace& trace, std::span<const std::size_t> marked) {
    if (marked.empty()) {
        return 1.0;
    }
    std::size_t hits = 0;
    for (std::size_t p : marked) {
        for (std::size_t i = 0; i < trace.final_positions.size(); ++i) {
            if (trace.final_positions[i] == p && trace.final_roles[i] == layout::TokenRole::Image) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(marked.size());
}

std::string trace_digest(const model::ForwardTrace& trace) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : trace.final_hidden().data()) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RunReport run_strategy(const ExperimentSpec& spec, const Experiment& exp, const pruner::Strategy& strategy) {
    return run_strategy(spec, exp.weights, exp.fixture, strategy);
}

RunReport run_strategy(const ExperimentSpec& spec, const model::DecoderWeights& w, const Fixture& fixture,
                       const pruner::Strategy& strategy) {
    const auto& seq = fixture.sequence;
    const std::size_t layers = w.config.num_layers;
    const std::size_t v0 = seq.image_count();
    pruner::validate_strategy(strategy, layers, v0);

    model::ForwardTrace trace;
    RunReport report;
    report.strategy = pruner::strategy_name(strategy);

    if (const auto* u = std::get_if<pruner::UniformCompression>(&strategy)) {
        const auto positions = layout::image_indices(seq);
        const auto kept = u->tokens == 0 ? std::vector<std::size_t>{} : evenly_spaced(positions, u->tokens);
        trace = model::forward_full(w, seq.retain_images(kept));
        report.stages.push_back({0, kept});
    } else {
        model::Ranker ranker = model::attention_ranker();
        if (const auto* r = std::get_if<pruner::RandomDrop>(&strategy)) {
            ranker = model::random_ranker(r->seed);
        }
        const auto events = pruner::strategy_drop_events(strategy, layers, v0);
        trace = model::forward_with_drops(w, seq, events, ranker);
        for (const auto& b : trace.boundaries) {
            report.stages.push_back({b.layer, b.decision.kept});
        }
    }

    report.recall = marker_recall(trace, fixture.marked);
    report.digest = trace_digest(trace);
    const std::uint64_t d = spec.cost_hidden ? spec.cost_hidden : w.config.hidden_size;
    const std::uint64_t m = spec.cost_ffn ? spec.cost_ffn : w.config.ffn_intermediate;
    report.cost = cost::strategy_cost(strategy, layers, v0, d, m);
    return report;
}

RunReport run_single(const ExperimentSpec& spec, std::uint64_t seed) {
    const Experiment exp = prepare(spec, seed);
    return run_strategy(spec, exp, make_strategy(spec.strategy, spec, seed));
}

std::vector<RunReport> run_compare(const ExperimentSpec& spec) {
    const Experiment exp = prepare(spec, spec.seed);
    std::vector<RunReport> reports;
    for (const auto& name : spec.strategies) {
        reports.push_back(run_strategy(spec, exp, make_strategy(name, spec, spec.seed)));
    }
    return reports;
}

std::vector<SweepRow> run_layer_sweep(const ExperimentSpec& spec) {
    const Experiment base = prepare(spec, spec.seed);
    const std::size_t layers = base.weights.config.num_layers;
    for (std::size_t l : spec.sweep_layers) {
        if (l == 0 || l >= layers) {
            throw ConfigError("sweep drop layer " + std::to_string(l) + " must lie in [1, " +
                              std::to_string(layers - 1) + "]");
        }
    }

    std::vector<Fixture> fixtures;
    fixtures.reserve(spec.sweep_fixtures);
    for (std::size_t f = 0; f < spec.sweep_fixtures; ++f) {
        fixtures.push_back(prepare_fixture(spec, base.weights.config, derive_seed(spec.seed, kSweepFixtureBase + f)));
    }

    std::vector<SweepRow> rows;
    for (std::size_t l : spec.sweep_layers) {
        for (double r : spec.sweep_ratios) {
            const pruner::Strategy strategy = pruner::SingleEarlyDrop{l, r};
            SweepRow row;
            row.layer = l;
            row.keep_ratio = r;
            double recall_sum = 0.0;
            for (const Fixture& fixture : fixtures) {
                const RunReport rep = run_strategy(spec, base.weights, fixture, strategy);
                recall_sum += rep.recall;
                row.kept_count = pruner::keep_count(r, fixture.sequence.image_count());
                row.flops = rep.cost.total;
            }
            row.recall = recall_sum / static_cast<double>(fixtures.size());
            rows.push_back(row);
        }
    }
    return rows;
}

double random_drop_recall(const ExperimentSpec& spec, std::size_t trials) {
    if (trials == 0) {
        throw ConfigError("need at least one trial");
    }
    const Experiment exp = prepare(spec, spec.seed);
    double sum = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const pruner::RandomDrop strategy{spec.pdrop.stages, spec.pdrop.ratio,
                                          derive_seed(spec.seed, kRandomTrialBase + t)};
        sum += run_strategy(spec, exp, strategy).recall;
    }
    return sum / static_cast<double>(trials);
}

void emit_masks(const RunReport& report, const std::filesystem::path& path) {
    if (report.stages.empty()) {
        throw InputError("strategy '" + report.strategy + "' has no drop stage to emit");
    }
    io::write_json_file(io::masks_json(report), path);
}

std::vector<StageMask> load_masks(const std::filesystem::path& path) {
    const io::Json j = io::read_json_file(path);
    std::vector<StageMask> out;
    try {
        for (const auto& s : j.at("stages")) {
            out.push_back({s.at("boundary").get<std::size_t>(), s.at("kept").get<std::vector<std::size_t>>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed mask file: ") + e.what());
    }
    for (std::size_t i = 1; i < out.size(); ++i) {
        const auto& outer = out[i - 1].kept;
        const auto& inner = out[i].kept;
        if (!std::is_sorted(outer.begin(), outer.end()) || !std::is_sorted(inner.begin(), inner.end()) ||
            !std::includes(outer.begin(), outer.end(), inner.begin(), inner.end())) {
            throw InputError("kept masks are not nested at stage " + std::to_string(i));
        }
    }
    return out;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
    std::ostringstream os;
    os << "layer,keep_ratio,recall,kept_count,flops\n";
    for (const SweepRow& r : rows) {
        os << r.layer << ',' << format_double(r.keep_ratio) << ',' << format_double(r.recall) << ','
           << r.kept_count << ',' << r.flops << '\n';
    }
    return os.str();
}

void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << sweep_csv(rows);
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

std::vector<double> parse_ratio_grid(const std::string& text) {
    auto to_double = [&](const std::string& s) {
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size()) {
                throw ConfigError("");
            }
            return v;
        } catch (const std::exception&) {
            throw ConfigError("cannot parse ratio '" + s + "'");
        }
    };
    std::vector<double> out;
    if (text.find(':') != std::string::npos) {
        std::vector<std::string> parts;
        std::stringstream ss(text);
        for (std::string p; std::getline(ss, p, ':');) {
            parts.push_back(p);
        }
        if (parts.size() != 3) {
            throw ConfigError("ratio range must be start:stop:step");
        }
        const double start = to_double(parts[0]);
        const double stop = to_double(parts[1]);
        const double step = to_double(parts[2]);
        if (!(step > 0.0) || stop < start) {
            throw ConfigError("ratio range needs step > 0 and stop >= start");
        }
        const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9));
        for (std::size_t i = 0; i <= n; ++i) {
            out.push_back(std::round((start + static_cast<double>(i) * step) * 1e12) / 1e12);
        }
    } else {
        std::stringstream ss(text);
        for (std::string p; std::getline(ss, p, ',');) {
            out.push_back(to_double(p));
        }
    }
    if (out.empty()) {
        throw ConfigError("empty ratio grid");
    }
    return out;
}

std::vector<std::size_t> parse_layer_list(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ',');) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(p, &used);
            if (used != p.size() || v < 0) {
                throw ConfigError("");
            }
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ConfigError("cannot parse layer '" + p + "'");
        }
    }
    if (out.empty()) {
        throw ConfigError("empty layer list");
    }
    return out;
}

}  // namespace pdrop::harness
