#include "carbongrid/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "carbongrid/errors.hpp"

namespace carbongrid {

double mean_of(std::span<const double> values) {
  if (values.empty()) throw ContractError("mean of empty vector");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double population_std(std::span<const double> values) {
  const double mu = mean_of(values);
  double ss = 0.0;
  for (double v : values) ss += (v - mu) * (v - mu);
  return std::sqrt(ss / static_cast<double>(values.size()));
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("pearson: length mismatch");
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson(ra, rb);
}

MetricsReport metrics(std::span<const double> y_true, std::span<const double> y_pred,
                      TargetSpace space) {
  if (y_true.size() != y_pred.size()) {
    throw DimensionError("metrics: " + std::to_string(y_true.size()) + " targets vs " +
                         std::to_string(y_pred.size()) + " predictions");
  }
  if (y_true.empty()) throw ContractError("metrics: no samples");
  MetricsReport r;
  r.n_samples = y_true.size();
  r.space = space;
  const double n = static_cast<double>(y_true.size());
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double d = y_pred[i] - y_true[i];
    abs_sum += std::fabs(d);
    sq_sum += d * d;
  }
  r.mae = abs_sum / n;
  r.rmse = std::sqrt(sq_sum / n);
  // Power-mean inequality, up to rounding in the two accumulations.
  if (r.rmse < r.mae * (1.0 - 1e-12)) {
    throw std::logic_error("metrics: RMSE below MAE");
  }
  const double mu = mean_of(y_true);
  double ss_tot = 0.0;
  for (double v : y_true) ss_tot += (v - mu) * (v - mu);
  if (ss_tot > 0.0) {
    r.r2 = 1.0 - sq_sum / ss_tot;
  } else {
    r.warnings.emplace_back("constant y_true: R2 undefined");
  }
  r.spearman = spearman(y_true, y_pred);
  if (!r.spearman) r.warnings.emplace_back("constant input: Spearman undefined");
  return r;
}

nlohmann::json metrics_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["mae"] = r.mae;
  j["rmse"] = r.rmse;
  j["r2"] = r.r2 ? nlohmann::json(*r.r2) : nlohmann::json(nullptr);
  j["spearman"] = r.spearman ? nlohmann::json(*r.spearman) : nlohmann::json(nullptr);
  j["n_samples"] = r.n_samples;
  j["target_space"] = r.space == TargetSpace::log ? "log" : "tonnes";
  j["warnings"] = r.warnings;
  return j;
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.mae = j.at("mae").get<double>();
  r.rmse = j.at("rmse").get<double>();
  if (!j.at("r2").is_null()) r.r2 = j.at("r2").get<double>();
  if (!j.at("spearman").is_null()) r.spearman = j.at("spearman").get<double>();
  r.n_samples = j.at("n_samples").get<std::size_t>();
  r.space = j.at("target_space").get<std::string>() == "tonnes" ? TargetSpace::tonnes
                                                                 : TargetSpace::log;
  r.warnings = j.value("warnings", std::vector<std::string>{});
  return r;
}

CalibrationStats CalibrationStats::from(std::span<const double> predictions,
                                        std::span<const double> targets) {
  return {mean_of(predictions), population_std(predictions), mean_of(targets),
          population_std(targets)};
}

std::vector<double> calibrate(std::span<const double> predictions, const CalibrationStats& s) {
  if (!(s.sigma > 0.0)) {
    throw ContractError("calibrate: source predictions have zero spread (sigma = 0)");
  }
  if (!(s.sigma_target > 0.0)) throw ContractError("calibrate: target sigma must be positive");
  std::vector<double> out(predictions.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (predictions[i] - s.mu) / s.sigma * s.sigma_target + s.mu_target;
  }
  return out;
}

}  // namespace carbongrid
