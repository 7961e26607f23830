#include "carbongrid/dataset_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "carbongrid/errors.hpp"
#include "carbongrid/json_util.hpp"
#include "carbongrid/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace carbongrid {

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw FormatError("cannot format double");
  return std::string(buf, end);
}

namespace {

std::string tensor_name(const char* prefix, const GridCell& cell) {
  return std::string(prefix) + "_" + std::to_string(cell.row) + "_" + std::to_string(cell.col) +
         ".f64";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& text, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError(where + ": not a number: '" + text + "'");
  }
  return v;
}

std::size_t parse_index(const std::string& text, const std::string& where) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError(where + ": not a nonnegative integer: '" + text + "'");
  }
  return v;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
}

}  // namespace

void write_dataset(const fs::path& dir, const RegionDataset& dataset) {
  fs::create_directories(dir);
  json region;
  region["bounds"] = {{"min_x", dataset.bounds.min_x},
                      {"min_y", dataset.bounds.min_y},
                      {"max_x", dataset.bounds.max_x},
                      {"max_y", dataset.bounds.max_y}};
  region["resolution_m"] = dataset.bounds.resolution_m;
  region["rows"] = dataset.rows;
  region["cols"] = dataset.cols;
  region["categories"] = dataset.categories;
  region["category_names"] = dataset.category_names;
  region["region_tags"] = dataset.region_tags();
  region["image_size"] = {dataset.image_height, dataset.image_width};
  region["poi_size"] = {dataset.poi_height, dataset.poi_width};
  write_text(dir / "region.json", region.dump(2) + "\n");

  std::string cells = "row,col,emission_t,region_tag,split\n";
  for (const GridCell& c : dataset.cells) {
    if (c.region_tag.find_first_of(",\n") != std::string::npos) {
      throw FormatError("region tag '" + c.region_tag + "' contains a separator");
    }
    cells += std::to_string(c.row) + "," + std::to_string(c.col) + "," +
             format_double(c.emission_t) + "," + c.region_tag + "," + split_name(c.split) + "\n";
    save_tensor(dir / tensor_name("img", c), c.image);
    save_tensor(dir / tensor_name("poi", c), c.poi);
  }
  write_text(dir / "cells.csv", cells);

  std::string pois = "x,y,category\n";
  for (const POIRecord& p : dataset.pois) {
    pois += format_double(p.x) + "," + format_double(p.y) + "," + std::to_string(p.category) + "\n";
  }
  write_text(dir / "pois.csv", pois);
}

RegionDataset read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("dataset directory not found: " + dir.string());
  RegionDataset ds;
  const json region = read_json_file(dir / "region.json");
  try {
    const json& b = region.at("bounds");
    ds.bounds.min_x = b.at("min_x").get<double>();
    ds.bounds.min_y = b.at("min_y").get<double>();
    ds.bounds.max_x = b.at("max_x").get<double>();
    ds.bounds.max_y = b.at("max_y").get<double>();
    ds.bounds.resolution_m = region.at("resolution_m").get<double>();
    ds.rows = region.at("rows").get<std::size_t>();
    ds.cols = region.at("cols").get<std::size_t>();
    ds.categories = region.at("categories").get<std::size_t>();
    ds.category_names = region.value("category_names", std::vector<std::string>{});
    ds.image_height = region.at("image_size").at(0).get<std::size_t>();
    ds.image_width = region.at("image_size").at(1).get<std::size_t>();
    ds.poi_height = region.at("poi_size").at(0).get<std::size_t>();
    ds.poi_width = region.at("poi_size").at(1).get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError("region.json: " + std::string(e.what()));
  }
  ds.bounds.validate();

  RegionBounds tiling = ds.bounds;
  std::vector<GridCell> skeleton = tile_region(tiling);
  const std::size_t tile_cols = grid_cols(tiling);

  std::ifstream cells_in(dir / "cells.csv");
  if (!cells_in) throw FormatError("missing cells.csv in " + dir.string());
  std::string line;
  std::getline(cells_in, line);
  if (line != "row,col,emission_t,region_tag,split") {
    throw FormatError("cells.csv: unexpected header '" + line + "'");
  }
  std::size_t line_no = 1;
  while (std::getline(cells_in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "cells.csv:" + std::to_string(line_no);
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw FormatError(where + ": expected 5 fields");
    GridCell cell;
    cell.row = parse_index(f[0], where);
    cell.col = parse_index(f[1], where);
    if (cell.row >= ds.rows || cell.col >= ds.cols) throw FormatError(where + ": cell outside grid");
    cell.emission_t = parse_double(f[2], where);
    cell.log_target = log_target_of(cell.emission_t);
    cell.region_tag = f[3];
    cell.split = parse_split(f[4]);
    if (cell.row * tile_cols + cell.col < skeleton.size()) {
      cell.footprint = skeleton[cell.row * tile_cols + cell.col].footprint;
    }
    cell.image = load_tensor(dir / tensor_name("img", cell));
    cell.poi = load_tensor(dir / tensor_name("poi", cell));
    ds.cells.push_back(std::move(cell));
  }

  std::ifstream pois_in(dir / "pois.csv");
  if (pois_in) {
    std::getline(pois_in, line);
    line_no = 1;
    while (std::getline(pois_in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const std::string where = "pois.csv:" + std::to_string(line_no);
      const auto f = split_csv_line(line);
      if (f.size() != 3) throw FormatError(where + ": expected 3 fields");
      ds.pois.push_back({parse_double(f[0], where), parse_double(f[1], where),
                         parse_index(f[2], where)});
    }
  }
  ds.reindex();
  ds.validate();
  return ds;
}

void write_truth(const fs::path& dir, const SynthTruth& truth) {
  json j;
  j["w"] = truth.weights;
  j["u"] = truth.image_weight;
  j["noise_std"] = truth.noise_std;
  j["smoothing_width"] = truth.smoothing_width;
  j["log_scale"] = truth.log_scale;
  j["log_shift"] = truth.log_shift;
  j["seed"] = truth.seed;
  j["raw_field"] = truth.raw_field;
  j["pre_noise_field"] = truth.pre_noise_field;
  write_text(dir / "truth.json", j.dump(2) + "\n");
}

json synth_spec_to_json(const SynthSpec& s) {
  json j;
  j["grid_rows"] = s.grid_rows;
  j["grid_cols"] = s.grid_cols;
  j["resolution_m"] = s.resolution_m;
  j["categories"] = s.categories;
  j["image_size"] = {s.image_height, s.image_width};
  j["poi_size"] = {s.poi_height, s.poi_width};
  j["weights"] = s.weights;
  j["image_weight"] = s.image_weight;
  j["smoothing_width"] = s.smoothing_width;
  j["noise_std"] = s.noise_std;
  j["latent_smoothing"] = s.latent_smoothing;
  j["density_contrast"] = s.density_contrast;
  j["poi_intensity"] = s.poi_intensity;
  j["image_mode"] = s.image_mode == ImageMode::noise ? "noise" : "density";
  j["region_bands"] = s.region_bands;
  j["log_scale"] = s.log_scale;
  j["log_shift"] = s.log_shift;
  j["split"] = split_config_to_json(s.split);
  j["seed"] = s.seed;
  return j;
}

json split_config_to_json(const SplitConfig& c) {
  return {{"mode", c.mode == SplitMode::random ? "random" : "regional"},
          {"train", c.train_fraction},
          {"valid", c.valid_fraction},
          {"test", c.test_fraction},
          {"valid_tags", c.valid_tags},
          {"test_tags", c.test_tags}};
}

SplitConfig split_config_from_json(const json& j, const std::string& context,
                                   std::vector<std::string>& problems) {
  SplitConfig cfg;
  StrictObject obj(j, context, problems);
  std::string mode = "random";
  obj.read("mode", mode);
  if (mode == "random") {
    cfg.mode = SplitMode::random;
  } else if (mode == "regional") {
    cfg.mode = SplitMode::regional;
  } else {
    problems.push_back(context + ".mode: expected 'random' or 'regional'");
  }
  obj.read("train", cfg.train_fraction);
  obj.read("valid", cfg.valid_fraction);
  obj.read("test", cfg.test_fraction);
  obj.read("valid_tags", cfg.valid_tags);
  obj.read("test_tags", cfg.test_tags);
  obj.finish();
  return cfg;
}

SynthSpec synth_spec_from_json(const json& j) {
  SynthSpec s;
  std::vector<std::string> problems;
  StrictObject obj(j, "synth spec", problems);
  obj.read("grid_rows", s.grid_rows);
  obj.read("grid_cols", s.grid_cols);
  obj.read("resolution_m", s.resolution_m);
  obj.read("categories", s.categories);
  std::vector<std::size_t> image_size{s.image_height, s.image_width};
  std::vector<std::size_t> poi_size{s.poi_height, s.poi_width};
  obj.read("image_size", image_size);
  obj.read("poi_size", poi_size);
  if (image_size.size() != 2 || poi_size.size() != 2) {
    problems.emplace_back("synth spec: image_size and poi_size take [height, width]");
  } else {
    s.image_height = image_size[0];
    s.image_width = image_size[1];
    s.poi_height = poi_size[0];
    s.poi_width = poi_size[1];
  }
  obj.read("weights", s.weights);
  obj.read("image_weight", s.image_weight);
  obj.read("smoothing_width", s.smoothing_width);
  obj.read("noise_std", s.noise_std);
  obj.read("latent_smoothing", s.latent_smoothing);
  obj.read("density_contrast", s.density_contrast);
  obj.read("poi_intensity", s.poi_intensity);
  std::string mode = "density";
  obj.read("image_mode", mode);
  if (mode == "density") {
    s.image_mode = ImageMode::density;
  } else if (mode == "noise") {
    s.image_mode = ImageMode::noise;
  } else {
    problems.emplace_back("synth spec.image_mode: expected 'density' or 'noise'");
  }
  obj.read("region_bands", s.region_bands);
  obj.read("log_scale", s.log_scale);
  obj.read("log_shift", s.log_shift);
  if (const json* split = obj.child("split")) {
    s.split = split_config_from_json(*split, "synth spec.split", problems);
  }
  obj.read("seed", s.seed);
  obj.finish();
  throw_if_problems(problems, "invalid synth spec");
  s.validate();
  return s;
}

}  // namespace carbongrid
