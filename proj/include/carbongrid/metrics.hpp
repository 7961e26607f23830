#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace carbongrid {

enum class TargetSpace { log, tonnes };

struct MetricsReport {
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> r2;        // undefined for constant y_true
  std::optional<double> spearman;  // undefined when either side is constant
  std::size_t n_samples = 0;
  TargetSpace space = TargetSpace::log;
  std::vector<std::string> warnings;
};

MetricsReport metrics(std::span<const double> y_true, std::span<const double> y_pred,
                      TargetSpace space = TargetSpace::log);

/// 1-based ranks; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

nlohmann::json metrics_to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const nlohmann::json& json);

/// Mean-deviation calibration: y -> (y - mu) / sigma * sigma_target + mu_target.
struct CalibrationStats {
  double mu = 0.0;
  double sigma = 1.0;
  double mu_target = 0.0;
  double sigma_target = 1.0;

  /// Population mean/std of the raw predictions and of the target values.
  static CalibrationStats from(std::span<const double> predictions,
                               std::span<const double> targets);
};

std::vector<double> calibrate(std::span<const double> predictions, const CalibrationStats& stats);

double mean_of(std::span<const double> values);
double population_std(std::span<const double> values);

}  // namespace carbongrid
