#pragma once

#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "carbongrid/adam.hpp"
#include "carbongrid/model.hpp"

namespace carbongrid {

// Checkpoint directory: manifest.json (config, parameter names/shapes/files,
// free-form metadata) plus one portable tensor file per parameter. Optimizer
// moments, when saved, go to adam/<name>.m.f64 and adam/<name>.v.f64.

struct Checkpoint {
  CarbonModel model;
  nlohmann::json metadata;
  std::optional<AdamState> optimizer;
};

void save_checkpoint(const std::filesystem::path& dir, const CarbonModel& model,
                     const nlohmann::json& metadata = nlohmann::json::object(),
                     const AdamState* optimizer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace carbongrid
