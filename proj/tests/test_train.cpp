#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "carbongrid/errors.hpp"
#include "carbongrid/synth.hpp"
#include "carbongrid/train.hpp"
#include "gradient_cases.hpp"

using namespace carbongrid;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  ModelConfig model;
  RegionDataset dataset;
};

Fixture small_fixture(std::uint64_t seed = 5) {
  SynthSpec spec;
  spec.grid_rows = spec.grid_cols = 6;
  spec.categories = 3;
  spec.image_height = spec.image_width = 8;
  spec.poi_height = spec.poi_width = 8;
  spec.poi_intensity = 10.0;
  spec.noise_std = 0.1;
  spec.seed = seed;
  Fixture f{testing::micro_setup(seed).config, synth_region(spec).dataset};
  return f;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.learning_rate = 5e-3;
  c.batch_size = 5;
  c.max_epochs = 6;
  c.patience = 50;
  c.alpha = 0.1;
  c.gate_epoch = 3;
  c.seed = 11;
  return c;
}

bool same_values(const ParameterStore& a, const ParameterStore& b) {
  if (a.names() != b.names()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a.tensors()[i].data();
    const auto y = b.tensors()[i].data();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

bool same_history(const TrainHistory& a, const TrainHistory& b) {
  if (a.epochs.size() != b.epochs.size() || a.best_epoch != b.best_epoch) return false;
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    const EpochRecord &x = a.epochs[i], &y = b.epochs[i];
    if (x.epoch != y.epoch || x.train_loss != y.train_loss || x.val_mae != y.val_mae ||
        x.val_rmse != y.val_rmse || x.val_r2 != y.val_r2 ||
        x.contrastive_active != y.contrastive_active)
      return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("validation rules") {
    TrainConfig ok;
    CHECK_NOTHROW(ok.validate());
    TrainConfig zero_lr;
    zero_lr.learning_rate = 0.0;
    CHECK_NOTHROW(zero_lr.validate());
    TrainConfig neg_lr;
    neg_lr.learning_rate = -1e-3;
    CHECK_THROWS_AS(neg_lr.validate(), ConfigError);
    TrainConfig small_batch;
    small_batch.batch_size = 1;
    CHECK_THROWS_AS(small_batch.validate(), ConfigError);
    small_batch.alpha = 0.0;
    CHECK_NOTHROW(small_batch.validate());
    TrainConfig no_patience;
    no_patience.patience = 0;
    CHECK_THROWS_AS(no_patience.validate(), ConfigError);
  }

  TEST_CASE("JSON round-trip keeps every field and flags unknown keys") {
    TrainConfig c = quick_config();
    c.split = SplitConfig{};
    c.split->mode = SplitMode::regional;
    c.split->valid_tags = {"D1"};
    c.split->test_tags = {"D2"};
    std::vector<std::string> problems;
    const TrainConfig back = train_config_from_json(train_config_to_json(c), problems);
    CHECK(problems.empty());
    CHECK(train_config_to_json(back) == train_config_to_json(c));
    nlohmann::json j = train_config_to_json(c);
    j["lr"] = 1;
    train_config_from_json(j, problems);
    CHECK(problems.size() == 1);
  }
}

TEST_SUITE("epoch_batches") {
  TEST_CASE("covers every index once, deterministic per (seed, epoch)") {
    std::vector<std::size_t> idx(23);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i * 2;
    const auto a = epoch_batches(idx, 5, 3, 0, false);
    const auto b = epoch_batches(idx, 5, 3, 0, false);
    const auto c = epoch_batches(idx, 5, 3, 1, false);
    CHECK(a == b);
    CHECK(a != c);
    std::vector<std::size_t> seen;
    for (const auto& batch : a) seen.insert(seen.end(), batch.begin(), batch.end());
    std::sort(seen.begin(), seen.end());
    CHECK(seen == idx);
    CHECK(a.size() == 5);
    CHECK(a.back().size() == 3);
  }

  TEST_CASE("a lone remainder merges only while contrastive is active") {
    std::vector<std::size_t> idx(11);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto off = epoch_batches(idx, 5, 1, 0, false);
    CHECK(off.size() == 3);
    CHECK(off.back().size() == 1);
    const auto on = epoch_batches(idx, 5, 1, 0, true);
    CHECK(on.size() == 2);
    CHECK(on.back().size() == 6);
  }
}

TEST_SUITE("train") {
  const Fixture fx = small_fixture();

  TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
    TrainConfig c = quick_config();
    c.learning_rate = 0.0;
    CarbonModel start(fx.model, 99);
    const ParameterStore before = start.parameters().clone();
    TrainOptions opts;
    opts.initial_model = std::move(start);
    const TrainResult r = train(fx.dataset, fx.model, c, opts);
    CHECK(same_values(r.final_state.current, before));
    CHECK(same_values(r.best_model.parameters(), before));
    CHECK(r.history.epochs.size() == c.max_epochs);
  }

  TEST_CASE("same seed and config give an identical history") {
    const TrainResult a = train(fx.dataset, fx.model, quick_config());
    const TrainResult b = train(fx.dataset, fx.model, quick_config());
    CHECK(same_history(a.history, b.history));
    CHECK(same_values(a.best_model.parameters(), b.best_model.parameters()));
  }

  TEST_CASE("epoch loss equals the mean of its batch losses") {
    TrainConfig c = quick_config();
    c.learning_rate = 0.0;
    c.max_epochs = 5;
    CarbonModel start(fx.model, 3);
    const CarbonModel frozen(fx.model, start.parameters().clone());
    TrainOptions opts;
    opts.initial_model = std::move(start);
    const TrainResult r = train(fx.dataset, fx.model, c, opts);
    const auto train_idx = r.dataset.indices_of(Split::train);
    for (const EpochRecord& e : r.history.epochs) {
      const bool active = c.alpha > 0.0 && e.epoch >= c.gate_epoch;
      double total = 0.0;
      const auto batches = epoch_batches(train_idx, c.batch_size, c.seed, e.epoch, active);
      for (const auto& batch : batches) {
        NoGradGuard guard;
        const BatchOutput out = frozen.forward(r.dataset, batch);
        std::vector<double> y;
        for (std::size_t i : batch) y.push_back(r.dataset.cells[i].log_target);
        total += total_loss(out.predictions, Tensor::vector(y), out.image_embeddings,
                            out.poi_embeddings, c.alpha, e.epoch, c.gate_epoch,
                            fx.model.temperature)
                     .total.item();
      }
      CHECK(std::abs(e.train_loss - total / static_cast<double>(batches.size())) <= 1e-9);
    }
  }

  TEST_CASE("best epoch has the minimum validation MAE; gate flag follows the epoch") {
    TrainConfig c = quick_config();
    c.max_epochs = 12;
    c.patience = 3;
    const TrainResult r = train(fx.dataset, fx.model, c);
    REQUIRE(!r.history.epochs.empty());
    CHECK(r.history.epochs.size() <= c.max_epochs);
    double best = 1e300;
    for (const EpochRecord& e : r.history.epochs) {
      best = std::min(best, e.val_mae);
      CHECK(e.contrastive_active == (e.epoch >= c.gate_epoch));
    }
    CHECK(r.history.epochs[r.history.best_epoch].val_mae == best);
    // The returned model reproduces the best epoch's validation MAE.
    const auto valid = r.dataset.indices_of(Split::valid);
    const auto pred = predict_cells(r.best_model, r.dataset, valid);
    double mae = 0.0;
    for (std::size_t k = 0; k < valid.size(); ++k)
      mae += std::abs(pred[k] - r.dataset.cells[valid[k]].log_target);
    CHECK(mae / static_cast<double>(valid.size()) == doctest::Approx(best).epsilon(1e-12));
    // Stopping early means `patience` epochs without improvement.
    if (r.history.epochs.size() < c.max_epochs) {
      CHECK(r.history.epochs.size() - 1 - r.history.best_epoch == c.patience);
    }
  }

  TEST_CASE("alpha 0 never activates the contrastive term") {
    TrainConfig c = quick_config();
    c.alpha = 0.0;
    c.gate_epoch = 0;
    const TrainResult r = train(fx.dataset, fx.model, c);
    for (const EpochRecord& e : r.history.epochs) CHECK_FALSE(e.contrastive_active);
  }

  TEST_CASE("resuming from a saved state matches an uninterrupted run") {
    TrainConfig full = quick_config();
    full.max_epochs = 6;
    const TrainResult whole = train(fx.dataset, fx.model, full);

    TrainConfig first = full;
    first.max_epochs = 3;
    const TrainResult part = train(fx.dataset, fx.model, first);
    const fs::path dir = fs::temp_directory_path() / "carbongrid_resume_state";
    fs::remove_all(dir);
    save_train_state(dir, fx.model, part.final_state);
    auto [config, state] = load_train_state(dir);
    CHECK(model_config_to_json(config) == model_config_to_json(fx.model));
    TrainOptions opts;
    opts.resume = std::move(state);
    const TrainResult rest = train(fx.dataset, fx.model, full, opts);
    CHECK(same_history(rest.history, whole.history));
    CHECK(same_values(rest.final_state.current, whole.final_state.current));
    fs::remove_all(dir);
  }

  TEST_CASE("diverging updates abort with the epoch and batch") {
    TrainConfig c = quick_config();
    c.learning_rate = 1e300;
    try {
      train(fx.dataset, fx.model, c);
      FAIL("expected TrainingAborted");
    } catch (const TrainingAborted& e) {
      CHECK(std::string(e.what()).find("epoch") != std::string::npos);
      CHECK(e.epoch() < c.max_epochs);
    }
  }

  TEST_CASE("empty validation split is a config error") {
    RegionDataset ds = fx.dataset;
    for (GridCell& cell : ds.cells)
      if (cell.split == Split::valid) cell.split = Split::train;
    CHECK_THROWS_AS(train(ds, fx.model, quick_config()), ConfigError);
  }

  TEST_CASE("history CSV layout") {
    TrainHistory h;
    h.epochs.push_back({0, 1.5, 0.5, 0.75, std::nullopt, false});
    h.epochs.push_back({1, 1.25, 0.25, 0.5, 0.5, true});
    const std::string csv = h.to_csv();
    CHECK(csv.rfind("epoch,train_loss,val_mae,val_rmse,val_r2,contrastive_active\n", 0) == 0);
    CHECK(csv.find("0,1.5,0.5,0.75,nan,0\n") != std::string::npos);
    CHECK(csv.find("1,1.25,0.25,0.5,0.5,1\n") != std::string::npos);
  }
}

TEST_SUITE("grid_search") {
  const Fixture fx = small_fixture();

  SearchSpace tiny_space() {
    SearchSpace s;
    s.learning_rates = {5e-3};
    s.batch_sizes = {5};
    s.neighborhoods = {3};
    s.alphas = {0.1};
    return s;
  }

  TEST_CASE("a single-configuration space returns that configuration") {
    GridSearchOptions opts;
    opts.trial_epochs = 3;
    const GridSearchResult r = grid_search(fx.dataset, fx.model, quick_config(), tiny_space(), opts);
    REQUIRE(r.leaderboard.size() == 1);
    CHECK(r.best_train_config.learning_rate == 5e-3);
    CHECK(r.best_train_config.batch_size == 5);
    CHECK(r.best_train_config.alpha == 0.1);
    CHECK(r.best_model_config.neighborhood == 3);
    CHECK(r.best_train_config.max_epochs == quick_config().max_epochs);
  }

  TEST_CASE("a trial with lr 0 loses to a trained one") {
    SearchSpace s = tiny_space();
    s.learning_rates = {0.0, 5e-3};
    GridSearchOptions opts;
    opts.trial_epochs = 8;
    const GridSearchResult r = grid_search(fx.dataset, fx.model, quick_config(), s, opts);
    REQUIRE(r.leaderboard.size() == 2);
    CHECK(r.leaderboard[0].learning_rate == 5e-3);
    CHECK(r.leaderboard[0].val_mae < r.leaderboard[1].val_mae);
  }

  TEST_CASE("budget keeps a prefix and the leaderboard has one row per trial") {
    SearchSpace s = tiny_space();
    s.learning_rates = {1e-3, 5e-3};
    s.alphas = {0.1, 0.01};
    GridSearchOptions opts;
    opts.trial_epochs = 2;
    opts.budget = 3;
    opts.jobs = 2;
    const fs::path dir = fs::temp_directory_path() / "carbongrid_grid_search";
    fs::remove_all(dir);
    opts.output_dir = dir;
    const GridSearchResult r = grid_search(fx.dataset, fx.model, quick_config(), s, opts);
    CHECK(r.leaderboard.size() == 3);
    std::vector<std::size_t> trials;
    for (const Trial& t : r.leaderboard) trials.push_back(t.index);
    std::sort(trials.begin(), trials.end());
    CHECK(trials == std::vector<std::size_t>{0, 1, 2});
    for (std::size_t i = 1; i < r.leaderboard.size(); ++i)
      CHECK(r.leaderboard[i - 1].val_mae <= r.leaderboard[i].val_mae);
    const std::string csv = r.leaderboard_csv();
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(fs::exists(dir / "leaderboard.csv"));
    CHECK(fs::exists(dir / "trial_0002" / "history.csv"));

    // Parallel and sequential runs agree.
    opts.jobs = 1;
    opts.output_dir.reset();
    const GridSearchResult seq = grid_search(fx.dataset, fx.model, quick_config(), s, opts);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(seq.leaderboard[i].index == r.leaderboard[i].index);
      CHECK(seq.leaderboard[i].val_mae == r.leaderboard[i].val_mae);
    }
    fs::remove_all(dir);
  }

  TEST_CASE("budget below 1 and empty spaces are rejected") {
    GridSearchOptions opts;
    opts.budget = 0;
    CHECK_THROWS_AS(grid_search(fx.dataset, fx.model, quick_config(), tiny_space(), opts),
                    ConfigError);
    SearchSpace empty = tiny_space();
    empty.alphas.clear();
    CHECK_THROWS_AS(grid_search(fx.dataset, fx.model, quick_config(), empty, GridSearchOptions{}),
                    ConfigError);
  }
}
