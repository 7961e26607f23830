#include "carbongrid/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "carbongrid/dataset_io.hpp"
#include "carbongrid/errors.hpp"

using nlohmann::json;

namespace carbongrid {

namespace {

std::vector<std::size_t> cells_of(const RegionDataset& ds, Split split) {
  if (split != Split::none) return ds.indices_of(split);
  std::vector<std::size_t> all(ds.cells.size());
  std::iota(all.begin(), all.end(), 0);
  return all;
}

std::vector<double> log_targets(const RegionDataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(ds.cells[i].log_target);
  return out;
}

}  // namespace

MetricsReport evaluate(const CarbonModel& model, const RegionDataset& dataset, Split split,
                       TargetSpace space) {
  check_compatible(model.config(), dataset);
  const auto idx = cells_of(dataset, split);
  if (idx.empty()) throw ContractError(std::string("split '") + split_name(split) + "' is empty");
  std::vector<double> y_true = log_targets(dataset, idx);
  std::vector<double> y_pred = predict_cells(model, dataset, idx);
  if (space == TargetSpace::tonnes) {
    for (double& v : y_true) v = emission_of(v);
    for (double& v : y_pred) v = emission_of(v);
  }
  return metrics(y_true, y_pred, space);
}

TransferReport transfer_eval(const CarbonModel& model, const std::string& source_tag,
                             const RegionDataset& target, bool use_calibration) {
  check_compatible(model.config(), target);
  const auto idx = cells_of(target, Split::none);
  if (idx.empty()) throw ContractError("target region has no cells");
  const std::vector<double> y_true = log_targets(target, idx);
  const std::vector<double> y_pred = predict_cells(model, target, idx);
  TransferReport report;
  report.source_tag = source_tag;
  report.n_cells = idx.size();
  report.direct = metrics(y_true, y_pred);
  if (use_calibration) {
    report.stats = CalibrationStats::from(y_pred, y_true);
    report.calibrated = metrics(y_true, calibrate(y_pred, *report.stats));
  }
  return report;
}

json transfer_report_to_json(const TransferReport& r) {
  json j = {{"source_tag", r.source_tag},
            {"n_cells", r.n_cells},
            {"direct", metrics_to_json(r.direct)}};
  if (r.calibrated) j["calibrated"] = metrics_to_json(*r.calibrated);
  if (r.stats) {
    j["calibration"] = {{"mu", r.stats->mu},
                        {"sigma", r.stats->sigma},
                        {"mu_target", r.stats->mu_target},
                        {"sigma_target", r.stats->sigma_target}};
  }
  return j;
}

std::vector<SweepCondition> resolution_sweep(const RegionDataset& dataset,
                                             const std::vector<std::size_t>& factors,
                                             const ModelConfig& model_config,
                                             const TrainConfig& train_config) {
  if (factors.empty()) throw ConfigError("resolution sweep: no factors given");
  std::vector<SweepCondition> out;
  for (std::size_t factor : factors) {
    if (factor < 1) throw ConfigError("resolution sweep: factors must be >= 1");
    const bool fits = dataset.rows >= factor && dataset.cols >= factor;
    const RegionDataset coarse = fits ? aggregate_resolution(dataset, factor) : RegionDataset{};
    if (coarse.cells.empty()) {
      throw ConfigError("resolution sweep: region too small for factor " + std::to_string(factor));
    }
    TrainResult result = train(coarse, model_config, train_config);
    SweepCondition c;
    c.factor = factor;
    c.n_cells = result.dataset.cells.size();
    c.n_train = result.dataset.indices_of(Split::train).size();
    c.n_valid = result.dataset.indices_of(Split::valid).size();
    c.n_test = result.dataset.indices_of(Split::test).size();
    if (c.n_test == 0) {
      throw ConfigError("resolution sweep: empty test split at factor " + std::to_string(factor));
    }
    c.best_epoch = result.history.best_epoch;
    c.epochs_run = result.history.epochs.size();
    c.test = evaluate(result.best_model, result.dataset, Split::test);
    out.push_back(std::move(c));
  }
  return out;
}

json sweep_condition_to_json(const SweepCondition& c) {
  return {{"factor", c.factor},         {"n_cells", c.n_cells},   {"n_train", c.n_train},
          {"n_valid", c.n_valid},       {"n_test", c.n_test},     {"best_epoch", c.best_epoch},
          {"epochs_run", c.epochs_run}, {"test", metrics_to_json(c.test)}};
}

std::string sweep_summary_csv(const std::vector<SweepCondition>& conditions) {
  std::string out = "factor,n_cells,n_train,n_valid,n_test,mae,rmse,r2,spearman,best_epoch\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : "nan"; };
  for (const SweepCondition& c : conditions) {
    out += std::to_string(c.factor) + "," + std::to_string(c.n_cells) + "," +
           std::to_string(c.n_train) + "," + std::to_string(c.n_valid) + "," +
           std::to_string(c.n_test) + "," + format_double(c.test.mae) + "," +
           format_double(c.test.rmse) + "," + opt(c.test.r2) + "," + opt(c.test.spearman) + "," +
           std::to_string(c.best_epoch) + "\n";
  }
  return out;
}

std::vector<int> deciles(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<int> out(values.size(), 1);
  for (std::size_t r = 0; r < order.size(); ++r) {
    out[order[r]] = static_cast<int>(r * 10 / order.size()) + 1;
  }
  return out;
}

std::vector<AttentionRow> export_attention(const CarbonModel& model, const RegionDataset& dataset) {
  check_compatible(model.config(), dataset);
  const auto idx = cells_of(dataset, Split::none);
  std::vector<AttentionRow> rows;
  if (idx.empty()) return rows;
  BatchOutput out;
  {
    NoGradGuard no_grad;
    out = model.forward(dataset, idx);
  }
  std::vector<double> emissions;
  for (std::size_t i : idx) emissions.push_back(dataset.cells[i].emission_t);
  const std::vector<int> dec = deciles(emissions);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const CellOutput& co = out.cells[k];
    const GridCell& cell = dataset.cells[idx[k]];
    rows.push_back({cell.row, cell.col, co.grid_weights[0], co.grid_weights[1],
                    co.nbhd_weights[0], co.nbhd_weights[1], dec[k]});
  }
  return rows;
}

std::string attention_csv(const std::vector<AttentionRow>& rows) {
  std::string out =
      "row,col,grid_weight_s,grid_weight_p,nbhd_weight_s,nbhd_weight_p,"
      "emission_decile\n";
  for (const AttentionRow& r : rows) {
    out += std::to_string(r.row) + "," + std::to_string(r.col) + "," + format_double(r.grid_image) +
           "," + format_double(r.grid_poi) + "," + format_double(r.nbhd_image) + "," +
           format_double(r.nbhd_poi) + "," + std::to_string(r.emission_decile) + "\n";
  }
  return out;
}

}  // namespace carbongrid
