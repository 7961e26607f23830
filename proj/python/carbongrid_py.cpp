#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "carbongrid/checkpoint.hpp"
#include "carbongrid/dataset_io.hpp"
#include "carbongrid/errors.hpp"
#include "carbongrid/evaluation.hpp"
#include "carbongrid/json_util.hpp"
#include "carbongrid/metrics.hpp"
#include "carbongrid/model.hpp"
#include "carbongrid/ops.hpp"
#include "carbongrid/synth.hpp"
#include "carbongrid/train.hpp"

namespace py = pybind11;
using namespace carbongrid;
using nlohmann::json;

namespace {

TargetSpace parse_space(const std::string& s) {
  if (s == "log") return TargetSpace::log;
  if (s == "tonnes") return TargetSpace::tonnes;
  throw ConfigError("space must be 'log' or 'tonnes', got '" + s + "'");
}

Split parse_split_or_all(const std::string& s) { return s == "all" ? Split::none : parse_split(s); }

ModelConfig model_config_from(const std::string& text) {
  std::vector<std::string> problems;
  ModelConfig c = model_config_from_json(json::parse(text), problems);
  throw_if_problems(problems, "invalid model config");
  c.validate();
  return c;
}

TrainConfig train_config_from(const std::string& text) {
  std::vector<std::string> problems;
  TrainConfig c = train_config_from_json(json::parse(text), problems);
  throw_if_problems(problems, "invalid train config");
  c.validate();
  return c;
}

Tensor matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw DimensionError("matrix needs at least one row");
  std::vector<double> flat;
  for (const auto& r : rows) {
    if (r.size() != rows[0].size()) throw DimensionError("ragged matrix rows");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), rows[0].size()}, std::move(flat));
}

std::string history_json(const TrainHistory& h) {
  json rows = json::array();
  for (const EpochRecord& e : h.epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"val_mae", e.val_mae},
                    {"val_rmse", e.val_rmse},
                    {"val_r2", e.val_r2 ? json(*e.val_r2) : json(nullptr)},
                    {"contrastive_active", e.contrastive_active}});
  }
  return json{{"epochs", rows}, {"best_epoch", h.best_epoch}, {"wall_seconds", h.wall_seconds}}
      .dump();
}

}  // namespace

PYBIND11_MODULE(_carbongrid, m) {
  m.doc() = "Gridded emission estimation from imagery and POI rasters";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<IncompatibleError>(m, "IncompatibleError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);

  // Metrics and calibration.
  m.def(
      "metrics_json",
      [](const std::vector<double>& y_true, const std::vector<double>& y_pred,
         const std::string& space) {
        return metrics_to_json(metrics(y_true, y_pred, parse_space(space))).dump();
      },
      py::arg("y_true"), py::arg("y_pred"), py::arg("space") = "log");
  m.def("spearman", [](const std::vector<double>& a, const std::vector<double>& b) {
    return spearman(a, b);
  });
  m.def(
      "calibrate",
      [](const std::vector<double>& y, double mu, double sigma, double mu_target,
         double sigma_target) {
        return calibrate(y, CalibrationStats{mu, sigma, mu_target, sigma_target});
      },
      py::arg("predictions"), py::arg("mu"), py::arg("sigma"), py::arg("mu_target"),
      py::arg("sigma_target"));
  m.def(
      "calibration_stats",
      [](const std::vector<double>& predictions, const std::vector<double>& targets) {
        const CalibrationStats s = CalibrationStats::from(predictions, targets);
        return std::make_tuple(s.mu, s.sigma, s.mu_target, s.sigma_target);
      },
      py::arg("predictions"), py::arg("targets"));

  // Building blocks on plain lists.
  m.def("softmax", [](const std::vector<double>& x) {
    const Tensor y = softmax(Tensor::vector(x));
    return std::vector<double>(y.data().begin(), y.data().end());
  });
  m.def(
      "ntxent",
      [](const std::vector<std::vector<double>>& image, const std::vector<std::vector<double>>& poi,
         double temperature, const std::string& denominator) {
        if (denominator != "paper" && denominator != "standard") {
          throw ConfigError("denominator must be 'paper' or 'standard'");
        }
        return ntxent(matrix(image), matrix(poi), temperature,
                      denominator == "paper" ? Denominator::paper : Denominator::standard)
            .item();
      },
      py::arg("image"), py::arg("poi"), py::arg("temperature") = 0.5,
      py::arg("denominator") = "paper");

  // Datasets.
  py::class_<RegionDataset>(m, "Dataset")
      .def_readonly("rows", &RegionDataset::rows)
      .def_readonly("cols", &RegionDataset::cols)
      .def_readonly("categories", &RegionDataset::categories)
      .def("__len__", [](const RegionDataset& d) { return d.cells.size(); })
      .def_property_readonly("log_targets",
                             [](const RegionDataset& d) {
                               std::vector<double> out;
                               for (const GridCell& c : d.cells) out.push_back(c.log_target);
                               return out;
                             })
      .def_property_readonly("splits",
                             [](const RegionDataset& d) {
                               std::vector<std::string> out;
                               for (const GridCell& c : d.cells) out.push_back(split_name(c.split));
                               return out;
                             })
      .def("indices", [](const RegionDataset& d, const std::string& split) {
        return d.indices_of(parse_split(split));
      })
      .def("save", [](const RegionDataset& d, const std::filesystem::path& dir) {
        write_dataset(dir, d);
      })
      .def("__repr__", [](const RegionDataset& d) {
        return "<Dataset " + std::to_string(d.rows) + "x" + std::to_string(d.cols) + ", " +
               std::to_string(d.cells.size()) + " cells>";
      });
  m.def("read_dataset", &read_dataset, py::arg("directory"));
  m.def(
      "synth_json",
      [](const std::string& spec) { return synth_region(synth_spec_from_json(json::parse(spec))).dataset; },
      py::arg("spec"));
  m.def("aggregate", &aggregate_resolution, py::arg("dataset"), py::arg("factor"));

  // Models.
  py::class_<CarbonModel>(m, "Model")
      .def_property_readonly("config_json",
                             [](const CarbonModel& model) {
                               return model_config_to_json(model.config()).dump();
                             })
      .def_property_readonly("parameter_count",
                             [](const CarbonModel& model) { return model.parameters().scalar_count(); })
      .def(
          "predict",
          [](const CarbonModel& model, const RegionDataset& d,
             std::optional<std::vector<std::size_t>> indices) {
            std::vector<std::size_t> idx;
            if (indices) {
              idx = *indices;
            } else {
              for (std::size_t i = 0; i < d.cells.size(); ++i) idx.push_back(i);
            }
            return predict_cells(model, d, idx);
          },
          py::arg("dataset"), py::arg("indices") = py::none(),
          py::call_guard<py::gil_scoped_release>())
      .def(
          "save",
          [](const CarbonModel& model, const std::filesystem::path& dir) { save_checkpoint(dir, model); },
          py::arg("directory"));
  m.def(
      "new_model_json",
      [](const std::string& config, std::uint64_t seed) {
        return CarbonModel(model_config_from(config), seed);
      },
      py::arg("config"), py::arg("seed") = 0);
  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& dir) { return load_checkpoint(dir).model; },
      py::arg("directory"));

  // Training and evaluation.
  m.def(
      "train_json",
      [](const RegionDataset& d, const std::string& model_config, const std::string& train_config) {
        const ModelConfig mc = model_config_from(model_config);
        const TrainConfig tc = train_config_from(train_config);
        py::gil_scoped_release release;
        TrainResult r = train(d, mc, tc);
        return std::make_tuple(std::move(r.best_model), history_json(r.history),
                               std::move(r.dataset));
      },
      py::arg("dataset"), py::arg("model_config"), py::arg("train_config"));
  m.def(
      "evaluate_json",
      [](const CarbonModel& model, const RegionDataset& d, const std::string& split,
         const std::string& space) {
        return metrics_to_json(evaluate(model, d, parse_split_or_all(split), parse_space(space)))
            .dump();
      },
      py::arg("model"), py::arg("dataset"), py::arg("split") = "test", py::arg("space") = "log");
  m.def(
      "transfer_json",
      [](const CarbonModel& model, const RegionDataset& target, bool use_calibration,
         const std::string& source_tag) {
        return transfer_report_to_json(transfer_eval(model, source_tag, target, use_calibration))
            .dump();
      },
      py::arg("model"), py::arg("target"), py::arg("calibrate") = true,
      py::arg("source_tag") = "source");
  m.def(
      "export_attention_csv",
      [](const CarbonModel& model, const RegionDataset& d) {
        return attention_csv(export_attention(model, d));
      },
      py::arg("model"), py::arg("dataset"));
}
