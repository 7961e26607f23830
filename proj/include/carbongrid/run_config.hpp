#pragma once

#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "carbongrid/model.hpp"
#include "carbongrid/train.hpp"

namespace carbongrid {

/// Everything a train / gridsearch / sweep invocation needs.
struct RunConfig {
  std::filesystem::path dataset;     // relative paths resolve against the config file
  std::filesystem::path output_dir;
  ModelConfig model;
  TrainConfig train;
  SearchSpace search;
};

/// Strict parse: unknown keys and ill-typed values are all reported in one
/// ConfigError. Model and train configs are validated.
RunConfig parse_run_config(const nlohmann::json& json, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& config);

}  // namespace carbongrid
