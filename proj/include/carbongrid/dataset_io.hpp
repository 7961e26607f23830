#pragma once

#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "carbongrid/geogrid.hpp"
#include "carbongrid/synth.hpp"

namespace carbongrid {

// Dataset directory layout:
//   region.json   bounds, resolution, grid extents, categories, tags, tile sizes
//   cells.csv     row,col,emission_t,region_tag,split
//   pois.csv      x,y,category
//   img_R_C.f64 / poi_R_C.f64   per-cell tensors in the portable format
//   truth.json    synthetic regions only

void write_dataset(const std::filesystem::path& dir, const RegionDataset& dataset);
RegionDataset read_dataset(const std::filesystem::path& dir);

void write_truth(const std::filesystem::path& dir, const SynthTruth& truth);

nlohmann::json synth_spec_to_json(const SynthSpec& spec);
/// Strict: unknown keys and ill-typed fields raise ConfigError listing every problem.
SynthSpec synth_spec_from_json(const nlohmann::json& json);

SplitConfig split_config_from_json(const nlohmann::json& json, const std::string& context,
                                   std::vector<std::string>& problems);
nlohmann::json split_config_to_json(const SplitConfig& config);

/// Shortest round-trip decimal form of a double.
std::string format_double(double value);

}  // namespace carbongrid
