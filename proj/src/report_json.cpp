#include "pdrop/report_json.hpp"

#include <fstream>

#include "pdrop/errors.hpp"

namespace pdrop::io {

namespace {

template <class T>
void read_opt(const Json& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

model::ModelConfig model_from_json(const Json& j) {
    model::ModelConfig c;
    read_opt(j, "layers", c.num_layers);
    read_opt(j, "hidden_size", c.hidden_size);
    read_opt(j, "num_heads", c.num_heads);
    read_opt(j, "head_dim", c.head_dim);
    read_opt(j, "ffn_intermediate", c.ffn_intermediate);
    read_opt(j, "vocab_size", c.vocab_size);
    read_opt(j, "max_positions", c.max_positions);
    read_opt(j, "rope_theta", c.rope_theta);
    read_opt(j, "rmsnorm_eps", c.rmsnorm_eps);
    return c;
}

}  // namespace

Json to_json(const cost::CostReport& r) {
    return Json{{"per_stage", r.per_stage}, {"total", r.total},           {"vanilla", r.vanilla},
                {"ratio", r.ratio},         {"avg_tokens", r.avg_tokens}, {"unit", "FLOPs"}};
}

Json to_json(const pruner::StageSchedule& s) {
    return Json{{"boundaries", s.boundary_layers},
                {"stage_layers", s.stage_layer_counts},
                {"stage_tokens", s.stage_token_counts},
                {"lambda", s.ratio},
                {"stages", s.num_stages}};
}

Json masks_json(const harness::RunReport& report) {
    Json stages = Json::array();
    for (const auto& s : report.stages) {
        stages.push_back(Json{{"boundary", s.boundary}, {"kept", s.kept}});
    }
    return Json{{"stages", stages}};
}

Json to_json(const harness::RunReport& report) {
    return Json{{"strategy", report.strategy},
                {"stages", masks_json(report).at("stages")},
                {"recall", report.recall},
                {"cost", to_json(report.cost)},
                {"digest", report.digest}};
}

harness::ExperimentSpec spec_from_json(const Json& j, const std::filesystem::path& base_dir) {
    harness::ExperimentSpec s;
    try {
        if (!j.is_object()) {
            throw ConfigError("experiment config must be a JSON object");
        }
        if (j.contains("model")) {
            s.model = model_from_json(j.at("model"));
        }
        read_opt(j, "seed", s.seed);

        if (j.contains("weights")) {
            const Json& w = j.at("weights");
            const std::string kind = w.value("kind", "marker");
            if (kind == "marker") {
                s.weights = harness::WeightsKind::Marker;
            } else if (kind == "random") {
                s.weights = harness::WeightsKind::Random;
            } else if (kind == "file") {
                s.weights = harness::WeightsKind::File;
                s.weights_path = resolve(base_dir, w.at("path").get<std::string>());
            } else {
                throw ConfigError("unknown weights kind '" + kind + "'");
            }
            read_opt(w, "marker_dims", s.marker_dims);
            read_opt(w, "onset_layer", s.marker_onset);
        }

        if (j.contains("sequence")) {
            const Json& q = j.at("sequence");
            if (q.contains("fixture")) {
                s.fixture_path = resolve(base_dir, q.at("fixture").get<std::string>());
            }
            read_opt(q, "image_tokens", s.image_tokens);
            read_opt(q, "marked", s.marked);
            read_opt(q, "instruction_length", s.instruction_length);
            read_opt(q, "answer_length", s.answer_length);
        }

        read_opt(j, "strategy", s.strategy);
        read_opt(j, "strategies", s.strategies);
        if (j.contains("pdrop")) {
            read_opt(j.at("pdrop"), "stages", s.pdrop.stages);
            read_opt(j.at("pdrop"), "lambda", s.pdrop.ratio);
        }
        if (j.contains("fastv")) {
            read_opt(j.at("fastv"), "layer", s.fastv.layer);
            read_opt(j.at("fastv"), "keep_ratio", s.fastv.keep_ratio);
        }
        if (j.contains("qformer")) {
            s.qformer_tokens = j.at("qformer").at("tokens").get<std::size_t>();
        }
        if (j.contains("sweep")) {
            const Json& w = j.at("sweep");
            read_opt(w, "layers", s.sweep_layers);
            read_opt(w, "ratios", s.sweep_ratios);
            read_opt(w, "fixtures", s.sweep_fixtures);
        }
        if (j.contains("cost")) {
            read_opt(j.at("cost"), "hidden_size", s.cost_hidden);
            read_opt(j.at("cost"), "ffn_intermediate", s.cost_ffn);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed experiment config: ") + e.what());
    }
    s.validate();
    return s;
}

harness::ExperimentSpec load_spec(const std::filesystem::path& path) {
    return spec_from_json(read_json_file(path), path.parent_path());
}

harness::Fixture fixture_from_json(const Json& j) {
    try {
        const auto rows = j.at("image").get<std::vector<std::vector<double>>>();
        const std::size_t width = rows.empty() ? 0 : rows.front().size();
        std::vector<double> data;
        for (const auto& r : rows) {
            if (r.size() != width) {
                throw InputError("fixture image rows differ in width");
            }
            data.insert(data.end(), r.begin(), r.end());
        }
        const auto instruction = j.at("instruction").get<std::vector<std::int64_t>>();
        const auto answer = j.value("answer", std::vector<std::int64_t>{});
        std::vector<std::size_t> marked = j.value("marked", std::vector<std::size_t>{});
        for (std::size_t p : marked) {
            if (p >= rows.size()) {
                throw InputError("marked position " + std::to_string(p) + " is not an image token");
            }
        }
        num::Matrix images(rows.size(), width, std::move(data));
        return harness::Fixture{layout::build_sequence(std::move(images), instruction, answer), std::move(marked)};
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed sequence fixture: ") + e.what());
    }
}

harness::Fixture load_fixture(const std::filesystem::path& path) {
    return fixture_from_json(read_json_file(path));
}

Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + " is not valid JSON: " + e.what());
    }
}

void write_json_file(const Json& j, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << j.dump(2) << '\n';
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

}  // namespace pdrop::io
