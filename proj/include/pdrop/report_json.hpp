#pragma once

#include <filesystem>

#include <json.hpp>

#include "pdrop/costmodel.hpp"
#include "pdrop/harness.hpp"
#include "pdrop/pruner.hpp"

namespace pdrop::io {

using Json = nlohmann::ordered_json;

Json to_json(const cost::CostReport& report);
Json to_json(const pruner::StageSchedule& schedule);
Json to_json(const harness::RunReport& report);
Json masks_json(const harness::RunReport& report);

/// Throws ConfigError on malformed fields. Relative paths resolve against `base_dir`.
harness::ExperimentSpec spec_from_json(const Json& j, const std::filesystem::path& base_dir = {});
/// Throws IoError if unreadable, ConfigError if not valid JSON.
harness::ExperimentSpec load_spec(const std::filesystem::path& path);

/// {"image": [[d floats]...], "instruction": [ids], "answer": [ids], "marked": [positions]?}
harness::Fixture fixture_from_json(const Json& j);
harness::Fixture load_fixture(const std::filesystem::path& path);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const Json& j, const std::filesystem::path& path);

}  // namespace pdrop::io
