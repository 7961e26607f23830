#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "carbongrid/adam.hpp"
#include "carbongrid/geogrid.hpp"
#include "carbongrid/metrics.hpp"
#include "carbongrid/model.hpp"

namespace carbongrid {

struct TrainConfig {
  double learning_rate = 5e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 500;
  std::size_t patience = 25;
  double alpha = 0.01;
  std::size_t gate_epoch = 100;
  std::uint64_t seed = 42;
  /// Applied before training. Without it, a dataset lacking train cells gets
  /// the default 60/20/20 random split.
  std::optional<SplitConfig> split;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& json, std::vector<std::string>& problems);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
  std::optional<double> val_r2;
  bool contrastive_active = false;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double wall_seconds = 0.0;

  std::string to_csv() const;
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  ParameterStore current;
  ParameterStore best;
  AdamState optimizer;
  std::size_t next_epoch = 0;
  double best_val_mae = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_since_improvement = 0;
  bool stopped_early = false;
  TrainHistory history;
};

void save_train_state(const std::filesystem::path& dir, const ModelConfig& config,
                      const TrainState& state);
/// Returns the config stored with the state alongside it.
std::pair<ModelConfig, TrainState> load_train_state(const std::filesystem::path& dir);

/// Raised when a loss or gradient turns non-finite.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::size_t epoch, std::size_t batch, const std::string& what);
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

struct TrainOptions {
  /// Starting parameters; a fresh seeded model (head bias at the mean train
  /// target) when absent.
  std::optional<CarbonModel> initial_model;
  /// Continue from a saved state instead of starting at epoch 0.
  std::optional<TrainState> resume;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  CarbonModel best_model;
  TrainHistory history;
  TrainState final_state;
  RegionDataset dataset;  // with the splits actually used
};

/// Splits the dataset as configured (see TrainConfig::split).
RegionDataset prepare_splits(const RegionDataset& dataset, const TrainConfig& config);

/// Mini-batch Adam with contrastive gating and early stopping on validation MAE.
TrainResult train(const RegionDataset& dataset, const ModelConfig& model_config,
                  const TrainConfig& train_config, TrainOptions options = {});

/// Batches of train indices for one epoch, per the shuffling and remainder rules.
std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<std::size_t>& train_indices,
                                                    std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch, bool contrastive_active);

/// Log-space predictions for the given cells, without recording a graph.
std::vector<double> predict_cells(const CarbonModel& model, const RegionDataset& dataset,
                                  std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// Hyperparameter search

struct SearchSpace {
  std::vector<double> learning_rates{5e-6, 1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2};
  std::vector<std::size_t> batch_sizes{32, 64, 128};
  std::vector<std::size_t> neighborhoods{3, 5, 7};
  std::vector<double> alphas{1e-1, 1e-2, 1e-3};

  std::size_t size() const {
    return learning_rates.size() * batch_sizes.size() * neighborhoods.size() * alphas.size();
  }
};

SearchSpace search_space_from_json(const nlohmann::json& json, std::vector<std::string>& problems);
nlohmann::json search_space_to_json(const SearchSpace& space);

struct Trial {
  std::size_t index = 0;
  double learning_rate = 0.0;
  std::size_t batch_size = 0;
  std::size_t neighborhood = 0;
  double alpha = 0.0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
  std::optional<double> val_r2;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

struct GridSearchResult {
  std::vector<Trial> leaderboard;  // sorted by val_mae, ties by trial index
  ModelConfig best_model_config;
  TrainConfig best_train_config;

  std::string leaderboard_csv() const;
};

struct GridSearchOptions {
  std::optional<std::size_t> budget;  // whole space when unset; must be >= 1
  std::size_t trial_epochs = 50; // max_epochs override per trial
  std::size_t jobs = 1;
  std::optional<std::filesystem::path> output_dir;
};

/// Trials run in lr → batch → M → alpha nested order; `budget` keeps a prefix.
GridSearchResult grid_search(const RegionDataset& dataset, const ModelConfig& model_config,
                             const TrainConfig& train_config, const SearchSpace& space,
                             const GridSearchOptions& options);

}  // namespace carbongrid
