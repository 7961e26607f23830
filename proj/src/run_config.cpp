#include "carbongrid/run_config.hpp"

#include <fstream>

#include "carbongrid/errors.hpp"
#include "carbongrid/json_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace carbongrid {

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  RunConfig rc;
  std::vector<std::string> problems;
  StrictObject obj(j, "config", problems);
  std::string dataset;
  std::string output_dir;
  obj.read("dataset", dataset);
  obj.read("output_dir", output_dir);
  if (dataset.empty()) problems.emplace_back("config.dataset: required");
  if (output_dir.empty()) problems.emplace_back("config.output_dir: required");
  if (const json* m = obj.child("model")) rc.model = model_config_from_json(*m, problems);
  if (const json* t = obj.child("train")) rc.train = train_config_from_json(*t, problems);
  if (const json* s = obj.child("search")) rc.search = search_space_from_json(*s, problems);
  obj.finish();
  throw_if_problems(problems, "invalid run config");

  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : (base_dir / path).lexically_normal();
  };
  rc.dataset = resolve(dataset);
  rc.output_dir = resolve(output_dir);
  rc.model.validate();
  rc.train.validate();
  return rc;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(j, fs::absolute(path).parent_path());
}

json run_config_to_json(const RunConfig& rc) {
  return {{"dataset", rc.dataset.string()},
          {"output_dir", rc.output_dir.string()},
          {"model", model_config_to_json(rc.model)},
          {"train", train_config_to_json(rc.train)},
          {"search", search_space_to_json(rc.search)}};
}

}  // namespace carbongrid
