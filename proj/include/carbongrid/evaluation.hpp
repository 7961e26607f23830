#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "carbongrid/geogrid.hpp"
#include "carbongrid/metrics.hpp"
#include "carbongrid/model.hpp"
#include "carbongrid/train.hpp"

namespace carbongrid {

/// Metrics over the cells of one split (every cell for Split::none).
MetricsReport evaluate(const CarbonModel& model, const RegionDataset& dataset, Split split,
                       TargetSpace space = TargetSpace::log);

struct TransferReport {
  std::string source_tag;
  std::size_t n_cells = 0;
  MetricsReport direct;
  std::optional<MetricsReport> calibrated;
  std::optional<CalibrationStats> stats;
};

/// Predicts every target cell; calibration uses the full prediction set for
/// mu/sigma and the target's log emissions for mu'/sigma'.
TransferReport transfer_eval(const CarbonModel& model, const std::string& source_tag,
                             const RegionDataset& target, bool use_calibration);

nlohmann::json transfer_report_to_json(const TransferReport& report);

struct SweepCondition {
  std::size_t factor = 1;
  std::size_t n_cells = 0;
  std::size_t n_train = 0;
  std::size_t n_valid = 0;
  std::size_t n_test = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  MetricsReport test;
};

/// Aggregates, retrains and evaluates on the test split for each factor.
std::vector<SweepCondition> resolution_sweep(const RegionDataset& dataset,
                                             const std::vector<std::size_t>& factors,
                                             const ModelConfig& model_config,
                                             const TrainConfig& train_config);

nlohmann::json sweep_condition_to_json(const SweepCondition& condition);
std::string sweep_summary_csv(const std::vector<SweepCondition>& conditions);

struct AttentionRow {
  std::size_t row = 0;
  std::size_t col = 0;
  double grid_image = 0.0;
  double grid_poi = 0.0;
  double nbhd_image = 0.0;
  double nbhd_poi = 0.0;
  int emission_decile = 1;  // 1..10 by true emission
};

std::vector<AttentionRow> export_attention(const CarbonModel& model, const RegionDataset& dataset);
std::string attention_csv(const std::vector<AttentionRow>& rows);

/// Deciles 1..10 by ascending value; ties broken by position.
std::vector<int> deciles(const std::vector<double>& values);

}  // namespace carbongrid
