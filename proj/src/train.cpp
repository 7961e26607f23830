#include "carbongrid/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "carbongrid/checkpoint.hpp"
#include "carbongrid/dataset_io.hpp"
#include "carbongrid/errors.hpp"
#include "carbongrid/json_util.hpp"
#include "carbongrid/ops.hpp"
#include "carbongrid/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace carbongrid {

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    problems.emplace_back("learning_rate must be >= 0");
  }
  if (batch_size < 1) problems.emplace_back("batch_size must be >= 1");
  if (alpha > 0.0 && batch_size < 2) problems.emplace_back("batch_size must be >= 2 when alpha > 0");
  if (max_epochs < 1) problems.emplace_back("max_epochs must be >= 1");
  if (patience < 1) problems.emplace_back("patience must be >= 1");
  if (!(alpha >= 0.0)) problems.emplace_back("alpha must be >= 0");
  throw_if_problems(problems, "invalid train config");
}

json train_config_to_json(const TrainConfig& c) {
  json j = {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},       {"patience", c.patience},
            {"alpha", c.alpha},                 {"gate_epoch", c.gate_epoch},
            {"seed", c.seed}};
  if (c.split) j["split"] = split_config_to_json(*c.split);
  return j;
}

TrainConfig train_config_from_json(const json& j, std::vector<std::string>& problems) {
  TrainConfig c;
  StrictObject obj(j, "train", problems);
  obj.read("learning_rate", c.learning_rate);
  obj.read("batch_size", c.batch_size);
  obj.read("max_epochs", c.max_epochs);
  obj.read("patience", c.patience);
  obj.read("alpha", c.alpha);
  obj.read("gate_epoch", c.gate_epoch);
  obj.read("seed", c.seed);
  if (const json* split = obj.child("split")) {
    c.split = split_config_from_json(*split, "train.split", problems);
  }
  obj.finish();
  return c;
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,train_loss,val_mae,val_rmse,val_r2,contrastive_active\n";
  for (const EpochRecord& e : epochs) {
    out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," +
           format_double(e.val_mae) + "," + format_double(e.val_rmse) + "," +
           (e.val_r2 ? format_double(*e.val_r2) : std::string("nan")) + "," +
           (e.contrastive_active ? "1" : "0") + "\n";
  }
  return out;
}

TrainingAborted::TrainingAborted(std::size_t epoch, std::size_t batch, const std::string& what)
    : std::runtime_error("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch) + ": " + what),
      epoch_(epoch),
      batch_(batch) {}

// ---------------------------------------------------------------------------
// State persistence

namespace {

json history_to_json(const TrainHistory& h) {
  json rows = json::array();
  for (const EpochRecord& e : h.epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"val_mae", e.val_mae},
                    {"val_rmse", e.val_rmse},
                    {"val_r2", e.val_r2 ? json(*e.val_r2) : json(nullptr)},
                    {"contrastive_active", e.contrastive_active}});
  }
  return {{"epochs", rows}, {"best_epoch", h.best_epoch}};
}

TrainHistory history_from_json(const json& j) {
  TrainHistory h;
  h.best_epoch = j.at("best_epoch").get<std::size_t>();
  for (const json& r : j.at("epochs")) {
    EpochRecord e;
    e.epoch = r.at("epoch").get<std::size_t>();
    e.train_loss = r.at("train_loss").get<double>();
    e.val_mae = r.at("val_mae").get<double>();
    e.val_rmse = r.at("val_rmse").get<double>();
    if (!r.at("val_r2").is_null()) e.val_r2 = r.at("val_r2").get<double>();
    e.contrastive_active = r.at("contrastive_active").get<bool>();
    h.epochs.push_back(e);
  }
  return h;
}

}  // namespace

void save_train_state(const fs::path& dir, const ModelConfig& config, const TrainState& state) {
  fs::create_directories(dir);
  save_checkpoint(dir / "current", CarbonModel(config, state.current.clone()), json::object(),
                  &state.optimizer);
  save_checkpoint(dir / "best", CarbonModel(config, state.best.clone()),
                  {{"best_epoch", state.best_epoch}});
  json j = {{"next_epoch", state.next_epoch},
            {"best_val_mae", std::isfinite(state.best_val_mae) ? json(state.best_val_mae)
                                                               : json(nullptr)},
            {"best_epoch", state.best_epoch},
            {"epochs_since_improvement", state.epochs_since_improvement},
            {"stopped_early", state.stopped_early},
            {"history", history_to_json(state.history)}};
  std::ofstream out(dir / "train_state.json", std::ios::trunc);
  if (!out) throw FormatError("cannot write train state to " + dir.string());
  out << j.dump(2) << "\n";
}

std::pair<ModelConfig, TrainState> load_train_state(const fs::path& dir) {
  std::ifstream in(dir / "train_state.json");
  if (!in) throw FormatError("no train_state.json in " + dir.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("train_state.json: " + std::string(e.what()));
  }
  Checkpoint current = load_checkpoint(dir / "current");
  Checkpoint best = load_checkpoint(dir / "best");
  TrainState state;
  state.current = current.model.parameters().clone();
  state.best = best.model.parameters().clone();
  if (!current.optimizer) throw FormatError("train state lacks optimizer moments");
  state.optimizer = *current.optimizer;
  state.next_epoch = j.at("next_epoch").get<std::size_t>();
  state.best_val_mae = j.at("best_val_mae").is_null() ? std::numeric_limits<double>::infinity()
                                                      : j.at("best_val_mae").get<double>();
  state.best_epoch = j.at("best_epoch").get<std::size_t>();
  state.epochs_since_improvement = j.at("epochs_since_improvement").get<std::size_t>();
  state.stopped_early = j.at("stopped_early").get<bool>();
  state.history = history_from_json(j.at("history"));
  return {current.model.config(), std::move(state)};
}

// ---------------------------------------------------------------------------
// Training

RegionDataset prepare_splits(const RegionDataset& dataset, const TrainConfig& config) {
  RegionDataset ds = dataset;
  if (config.split) {
    split_dataset(ds, *config.split, config.seed);
  } else if (ds.indices_of(Split::train).empty()) {
    split_dataset(ds, SplitConfig{}, config.seed);
  }
  if (ds.indices_of(Split::train).empty()) throw ConfigError("train split is empty");
  if (ds.indices_of(Split::valid).empty()) throw ConfigError("validation split is empty");
  return ds;
}

std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<std::size_t>& train_indices,
                                                    std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch, bool contrastive_active) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order = train_indices;
  Rng rng(derive_seed(seed, "shuffle." + std::to_string(epoch)));
  shuffle(order, rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (contrastive_active && batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

std::vector<double> predict_cells(const CarbonModel& model, const RegionDataset& dataset,
                                  std::span<const std::size_t> indices) {
  if (indices.empty()) return {};
  NoGradGuard no_grad;
  const BatchOutput out = model.forward(dataset, indices);
  return {out.predictions.data().begin(), out.predictions.data().end()};
}

namespace {

bool gradients_finite(const ParameterStore& params) {
  for (const Tensor& t : params.tensors()) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

std::vector<double> targets_of(const RegionDataset& ds, std::span<const std::size_t> idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(ds.cells[i].log_target);
  return out;
}

}  // namespace

TrainResult train(const RegionDataset& dataset, const ModelConfig& model_config,
                  const TrainConfig& config, TrainOptions options) {
  const auto started = std::chrono::steady_clock::now();
  config.validate();
  model_config.validate();
  RegionDataset ds = prepare_splits(dataset, config);
  check_compatible(model_config, ds);
  const std::vector<std::size_t> train_idx = ds.indices_of(Split::train);
  const std::vector<std::size_t> valid_idx = ds.indices_of(Split::valid);
  const std::vector<double> valid_targets = targets_of(ds, valid_idx);

  TrainState state;
  std::optional<CarbonModel> model;
  if (options.resume) {
    state = std::move(*options.resume);
    model.emplace(model_config, state.current.clone());
    state.stopped_early = false;
  } else {
    if (options.initial_model) {
      model.emplace(options.initial_model->config(),
                    options.initial_model->parameters().clone());
    } else {
      model.emplace(model_config, derive_seed(config.seed, "model"));
      const auto targets = targets_of(ds, train_idx);
      const double mean_target = mean_of(targets);
      model->parameters().at("head.out.bias").assign(std::span<const double>(&mean_target, 1));
    }
    state.best = model->parameters().clone();
    state.best_val_mae = std::numeric_limits<double>::infinity();
  }
  state.optimizer.learning_rate = config.learning_rate;

  ParameterStore& params = model->parameters();
  for (std::size_t epoch = state.next_epoch; epoch < config.max_epochs; ++epoch) {
    const bool contrastive = config.alpha > 0.0 && epoch >= config.gate_epoch;
    const auto batches = epoch_batches(train_idx, config.batch_size, config.seed, epoch, contrastive);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      params.zero_grad();
      try {
        const BatchOutput out = model->forward(ds, batches[b]);
        const Tensor targets = Tensor::vector(targets_of(ds, batches[b]));
        const LossTerms terms =
            total_loss(out.predictions, targets, out.image_embeddings, out.poi_embeddings,
                       config.alpha, epoch, config.gate_epoch, model_config.temperature,
                       model_config.denominator);
        backward(terms.total);
        loss_sum += terms.total.item();
      } catch (const NonFiniteError& e) {
        throw TrainingAborted(epoch, b, e.what());
      }
      if (!gradients_finite(params)) throw TrainingAborted(epoch, b, "non-finite gradient");
      try {
        adam_step(params.tensors(), state.optimizer);
      } catch (const NonFiniteError& e) {
        throw TrainingAborted(epoch, b, e.what());
      }
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(batches.size());
    record.contrastive_active = contrastive;
    const MetricsReport val = metrics(valid_targets, predict_cells(*model, ds, valid_idx));
    record.val_mae = val.mae;
    record.val_rmse = val.rmse;
    record.val_r2 = val.r2;
    state.history.epochs.push_back(record);
    if (options.on_epoch) options.on_epoch(record);

    if (val.mae < state.best_val_mae) {
      state.best_val_mae = val.mae;
      state.best_epoch = epoch;
      state.best = params.clone();
      state.epochs_since_improvement = 0;
    } else {
      ++state.epochs_since_improvement;
    }
    state.next_epoch = epoch + 1;
    if (state.epochs_since_improvement >= config.patience) {
      state.stopped_early = true;
      break;
    }
  }
  state.current = params.clone();
  state.history.best_epoch = state.best_epoch;
  state.history.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  CarbonModel best(model_config, state.best.clone());
  TrainHistory history = state.history;
  return {std::move(best), std::move(history), std::move(state), std::move(ds)};
}

// ---------------------------------------------------------------------------
// Grid search

SearchSpace search_space_from_json(const json& j, std::vector<std::string>& problems) {
  SearchSpace s;
  StrictObject obj(j, "search", problems);
  obj.read("learning_rates", s.learning_rates);
  obj.read("batch_sizes", s.batch_sizes);
  obj.read("neighborhoods", s.neighborhoods);
  obj.read("alphas", s.alphas);
  obj.finish();
  return s;
}

json search_space_to_json(const SearchSpace& s) {
  return {{"learning_rates", s.learning_rates},
          {"batch_sizes", s.batch_sizes},
          {"neighborhoods", s.neighborhoods},
          {"alphas", s.alphas}};
}

std::string GridSearchResult::leaderboard_csv() const {
  std::string out =
      "rank,trial,learning_rate,batch_size,neighborhood,alpha,val_mae,val_rmse,val_r2,best_epoch,"
      "epochs_run\n";
  for (std::size_t r = 0; r < leaderboard.size(); ++r) {
    const Trial& t = leaderboard[r];
    out += std::to_string(r + 1) + "," + std::to_string(t.index) + "," +
           format_double(t.learning_rate) + "," + std::to_string(t.batch_size) + "," +
           std::to_string(t.neighborhood) + "," + format_double(t.alpha) + "," +
           format_double(t.val_mae) + "," + format_double(t.val_rmse) + "," +
           (t.val_r2 ? format_double(*t.val_r2) : std::string("nan")) + "," +
           std::to_string(t.best_epoch) + "," + std::to_string(t.epochs_run) + "\n";
  }
  return out;
}

GridSearchResult grid_search(const RegionDataset& dataset, const ModelConfig& model_config,
                             const TrainConfig& train_config, const SearchSpace& space,
                             const GridSearchOptions& options) {
  if (space.size() == 0) throw ConfigError("grid search: empty search space");
  if (options.budget && *options.budget < 1) throw ConfigError("grid search: budget must be >= 1");
  if (options.trial_epochs < 1) throw ConfigError("grid search: trial_epochs must be >= 1");

  std::vector<Trial> trials;
  for (double lr : space.learning_rates) {
    for (std::size_t bs : space.batch_sizes) {
      for (std::size_t m : space.neighborhoods) {
        for (double a : space.alphas) {
          Trial t;
          t.index = trials.size();
          t.learning_rate = lr;
          t.batch_size = bs;
          t.neighborhood = m;
          t.alpha = a;
          trials.push_back(t);
        }
      }
    }
  }
  if (options.budget && *options.budget < trials.size()) trials.resize(*options.budget);

  auto configs_for = [&](const Trial& t) {
    ModelConfig mc = model_config;
    mc.neighborhood = t.neighborhood;
    TrainConfig tc = train_config;
    tc.learning_rate = t.learning_rate;
    tc.batch_size = t.batch_size;
    tc.alpha = t.alpha;
    tc.max_epochs = options.trial_epochs;
    return std::pair{mc, tc};
  };

  std::vector<std::exception_ptr> failures(trials.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < trials.size(); i = next++) {
      try {
        auto [mc, tc] = configs_for(trials[i]);
        const TrainResult result = train(dataset, mc, tc);
        const EpochRecord& best = result.history.epochs.at(
            result.history.best_epoch - result.history.epochs.front().epoch);
        trials[i].val_mae = best.val_mae;
        trials[i].val_rmse = best.val_rmse;
        trials[i].val_r2 = best.val_r2;
        trials[i].best_epoch = best.epoch;
        trials[i].epochs_run = result.history.epochs.size();
        if (options.output_dir) {
          char name[32];
          std::snprintf(name, sizeof(name), "trial_%04zu", i);
          const fs::path dir = *options.output_dir / name;
          fs::create_directories(dir);
          std::ofstream(dir / "history.csv", std::ios::trunc) << result.history.to_csv();
          std::ofstream(dir / "trial_config.json", std::ios::trunc)
              << json{{"model", model_config_to_json(mc)}, {"train", train_config_to_json(tc)}}
                     .dump(2)
              << "\n";
        }
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, trials.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  GridSearchResult result;
  result.leaderboard = trials;
  std::stable_sort(result.leaderboard.begin(), result.leaderboard.end(),
                   [](const Trial& a, const Trial& b) { return a.val_mae < b.val_mae; });
  auto [mc, tc] = configs_for(result.leaderboard.front());
  tc.max_epochs = train_config.max_epochs;
  result.best_model_config = mc;
  result.best_train_config = tc;
  if (options.output_dir) {
    std::ofstream(*options.output_dir / "leaderboard.csv", std::ios::trunc)
        << result.leaderboard_csv();
  }
  return result;
}

}  // namespace carbongrid
