#include "carbongrid/checkpoint.hpp"

#include <fstream>

#include "carbongrid/errors.hpp"
#include "carbongrid/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace carbongrid {

namespace {
constexpr const char* kFormat = "carbongrid-checkpoint";
}

void save_checkpoint(const fs::path& dir, const CarbonModel& model, const json& metadata,
                     const AdamState* optimizer) {
  fs::create_directories(dir);
  const ParameterStore& params = model.parameters();
  json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = 1;
  manifest["config"] = model_config_to_json(model.config());
  manifest["metadata"] = metadata;
  json entries = json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.names()[i];
    const Tensor& t = params.tensors()[i];
    const std::string file = name + ".f64";
    save_tensor(dir / file, t);
    entries.push_back({{"name", name}, {"file", file}, {"shape", t.shape()}});
  }
  manifest["parameters"] = entries;
  if (optimizer) {
    fs::create_directories(dir / "adam");
    manifest["optimizer"] = {{"learning_rate", optimizer->learning_rate},
                             {"beta1", optimizer->beta1},
                             {"beta2", optimizer->beta2},
                             {"epsilon", optimizer->epsilon},
                             {"step", optimizer->step}};
    for (std::size_t i = 0; i < optimizer->first_moment.size(); ++i) {
      const Shape& shape = params.tensors()[i].shape();
      const std::string& name = params.names()[i];
      save_tensor(dir / "adam" / (name + ".m.f64"), Tensor(shape, optimizer->first_moment[i]));
      save_tensor(dir / "adam" / (name + ".v.f64"), Tensor(shape, optimizer->second_moment[i]));
    }
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("no checkpoint manifest in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != kFormat) {
    throw FormatError(dir.string() + " is not a checkpoint directory");
  }
  std::vector<std::string> problems;
  ModelConfig config = model_config_from_json(manifest.at("config"), problems);
  if (!problems.empty()) throw FormatError("checkpoint config: " + problems.front());

  ParameterStore params;
  for (const json& entry : manifest.at("parameters")) {
    const std::string name = entry.at("name").get<std::string>();
    Tensor loaded = load_tensor(dir / entry.at("file").get<std::string>());
    params.add(name, Tensor(loaded.shape(), {loaded.data().begin(), loaded.data().end()}, true));
  }
  Checkpoint ckpt{CarbonModel(std::move(config), std::move(params)),
                  manifest.value("metadata", json::object()), std::nullopt};
  if (manifest.contains("optimizer")) {
    const json& o = manifest["optimizer"];
    AdamState state;
    state.learning_rate = o.at("learning_rate").get<double>();
    state.beta1 = o.at("beta1").get<double>();
    state.beta2 = o.at("beta2").get<double>();
    state.epsilon = o.at("epsilon").get<double>();
    state.step = o.at("step").get<std::uint64_t>();
    const ParameterStore& p = ckpt.model.parameters();
    for (const std::string& name : p.names()) {
      const Tensor m = load_tensor(dir / "adam" / (name + ".m.f64"));
      const Tensor v = load_tensor(dir / "adam" / (name + ".v.f64"));
      state.first_moment.emplace_back(m.data().begin(), m.data().end());
      state.second_moment.emplace_back(v.data().begin(), v.data().end());
    }
    ckpt.optimizer = std::move(state);
  }
  return ckpt;
}

}  // namespace carbongrid
