#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "carbongrid/checkpoint.hpp"
#include "carbongrid/dataset_io.hpp"
#include "carbongrid/errors.hpp"
#include "carbongrid/evaluation.hpp"
#include "carbongrid/json_util.hpp"
#include "carbongrid/run_config.hpp"
#include "carbongrid/synth.hpp"
#include "carbongrid/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace carbongrid;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kAborted = 3 };

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

Split split_arg(const std::string& name) {
  if (name == "all") return Split::none;
  return parse_split(name);
}

TargetSpace space_arg(const std::string& name) {
  if (name == "log") return TargetSpace::log;
  if (name == "tonnes") return TargetSpace::tonnes;
  throw ConfigError("--space must be 'log' or 'tonnes'");
}

/// The dataset with the splits the checkpoint was trained on.
RegionDataset splits_for(const Checkpoint& ckpt, const RegionDataset& dataset) {
  if (!ckpt.metadata.contains("train")) return dataset;
  std::vector<std::string> problems;
  const TrainConfig tc = train_config_from_json(ckpt.metadata.at("train"), problems);
  throw_if_problems(problems, "checkpoint train metadata");
  return prepare_splits(dataset, tc);
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  const SynthSpec spec = a.spec.empty() ? SynthSpec{} : synth_spec_from_json(read_json(a.spec));
  spec.validate();
  const SynthRegion region = synth_region(spec);
  write_dataset(a.out, region.dataset);
  write_truth(a.out, region.truth);
  write_json(fs::path(a.out) / "resolved_config.json",
             {{"command", "synth"}, {"spec", synth_spec_to_json(spec)}});
  std::cout << "wrote " << region.dataset.cells.size() << " cells to " << a.out << "\n";
  return kOk;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string checkpoint;
  std::string out;
  bool dry_run = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc = load_run_config(a.config);
  if (!a.out.empty()) rc.output_dir = a.out;
  const RegionDataset dataset = read_dataset(rc.dataset);
  const RegionDataset split = prepare_splits(dataset, rc.train);
  check_compatible(rc.model, split);

  TrainOptions options;
  if (!a.checkpoint.empty()) {
    auto [config, state] = load_train_state(a.checkpoint);
    if (model_config_to_json(config) != model_config_to_json(rc.model)) {
      throw ConfigError("--checkpoint was trained with a different model config");
    }
    options.resume = std::move(state);
  }

  const json resolved = {{"command", "train"},
                         {"config", run_config_to_json(rc)},
                         {"resume_from", a.checkpoint},
                         {"splits",
                          {{"train", split.indices_of(Split::train).size()},
                           {"valid", split.indices_of(Split::valid).size()},
                           {"test", split.indices_of(Split::test).size()}}}};
  if (a.dry_run) {
    std::cout << resolved.dump(2) << "\n";
    return kOk;
  }
  fs::create_directories(rc.output_dir);
  write_json(rc.output_dir / "resolved_config.json", resolved);

  if (!a.quiet) {
    options.on_epoch = [](const EpochRecord& e) {
      std::printf("epoch %4zu  loss %.6f  val_mae %.6f  val_r2 %s%s\n", e.epoch, e.train_loss,
                  e.val_mae, e.val_r2 ? std::to_string(*e.val_r2).c_str() : "nan",
                  e.contrastive_active ? "  [contrastive]" : "");
      std::fflush(stdout);
    };
  }
  TrainResult result = train(dataset, rc.model, rc.train, std::move(options));

  const json metadata = {{"train", train_config_to_json(rc.train)},
                         {"best_epoch", result.history.best_epoch}};
  save_checkpoint(rc.output_dir / "checkpoint", result.best_model, metadata);
  save_train_state(rc.output_dir / "state", rc.model, result.final_state);
  write_file(rc.output_dir / "history.csv", result.history.to_csv());
  const MetricsReport test = evaluate(result.best_model, result.dataset, Split::test);
  write_json(rc.output_dir / "metrics_test.json", metrics_to_json(test));
  std::printf("best epoch %zu, test mae %.6f r2 %s\n", result.history.best_epoch, test.mae,
              test.r2 ? std::to_string(*test.r2).c_str() : "nan");
  return kOk;
}

// --- gridsearch ------------------------------------------------------------

struct GridArgs {
  std::string config;
  std::string out;
  std::size_t jobs = 1;
  std::optional<long long> budget;
  std::size_t trial_epochs = 50;
};

int cmd_gridsearch(const GridArgs& a) {
  RunConfig rc = load_run_config(a.config);
  if (!a.out.empty()) rc.output_dir = a.out;
  if (a.budget && *a.budget < 1) throw ConfigError("--budget must be >= 1");
  const RegionDataset dataset = read_dataset(rc.dataset);
  GridSearchOptions opts;
  if (a.budget) opts.budget = static_cast<std::size_t>(*a.budget);
  opts.trial_epochs = a.trial_epochs;
  opts.jobs = a.jobs;
  opts.output_dir = rc.output_dir / "trials";
  fs::create_directories(*opts.output_dir);
  json resolved = {{"command", "gridsearch"},
                   {"config", run_config_to_json(rc)},
                   {"jobs", a.jobs},
                   {"trial_epochs", a.trial_epochs}};
  resolved["budget"] = a.budget ? json(*a.budget) : json(nullptr);
  write_json(rc.output_dir / "resolved_config.json", resolved);

  const GridSearchResult result = grid_search(dataset, rc.model, rc.train, rc.search, opts);
  write_file(rc.output_dir / "leaderboard.csv", result.leaderboard_csv());
  write_json(rc.output_dir / "best_config.json",
             {{"model", model_config_to_json(result.best_model_config)},
              {"train", train_config_to_json(result.best_train_config)}});
  const Trial& best = result.leaderboard.front();
  std::printf("%zu trials; best trial %zu: lr %g batch %zu M %zu alpha %g val_mae %.6f\n",
              result.leaderboard.size(), best.index, best.learning_rate, best.batch_size,
              best.neighborhood, best.alpha, best.val_mae);
  return kOk;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string out;
  std::string split = "test";
  std::string space = "log";
};

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const RegionDataset ds = splits_for(ckpt, read_dataset(a.dataset));
  const Split split = split_arg(a.split);
  const MetricsReport report = evaluate(ckpt.model, ds, split, space_arg(a.space));
  fs::create_directories(a.out);
  write_json(fs::path(a.out) / "resolved_config.json",
             {{"command", "eval"},
              {"checkpoint", a.checkpoint},
              {"dataset", a.dataset},
              {"split", a.split},
              {"space", a.space}});
  write_json(fs::path(a.out) / ("metrics_" + a.split + ".json"), metrics_to_json(report));
  std::cout << metrics_to_json(report).dump(2) << "\n";
  return kOk;
}

// --- transfer --------------------------------------------------------------

struct TransferArgs {
  std::string checkpoint;
  std::string target;
  std::string out;
  std::string source_tag = "source";
  bool calibrate = false;
};

int cmd_transfer(const TransferArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const RegionDataset target = read_dataset(a.target);
  const TransferReport report = transfer_eval(ckpt.model, a.source_tag, target, a.calibrate);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_json(out / "resolved_config.json",
             {{"command", "transfer"},
              {"checkpoint", a.checkpoint},
              {"target", a.target},
              {"source_tag", a.source_tag},
              {"calibrate", a.calibrate}});
  json direct = metrics_to_json(report.direct);
  direct["source_tag"] = a.source_tag;
  direct["condition"] = "direct";
  write_json(out / "transfer_direct.json", direct);
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : "nan"; };
  std::string csv = "condition,source_tag,n_cells,mae,rmse,r2,spearman\n";
  auto row = [&](const char* cond, const MetricsReport& m) {
    csv += std::string(cond) + "," + a.source_tag + "," + std::to_string(m.n_samples) + "," +
           format_double(m.mae) + "," + format_double(m.rmse) + "," + opt(m.r2) + "," +
           opt(m.spearman) + "\n";
  };
  row("direct", report.direct);
  if (report.calibrated) {
    json cal = metrics_to_json(*report.calibrated);
    cal["source_tag"] = a.source_tag;
    cal["condition"] = "calibrated";
    cal["calibration"] = transfer_report_to_json(report)["calibration"];
    write_json(out / "transfer_calibrated.json", cal);
    row("calibrated", *report.calibrated);
  }
  write_file(out / "transfer_summary.csv", csv);
  std::cout << csv;
  return kOk;
}

// --- sweep -----------------------------------------------------------------

struct SweepArgs {
  std::string config;
  std::string out;
  std::vector<std::size_t> factors{1, 2, 3};
};

int cmd_sweep(const SweepArgs& a) {
  RunConfig rc = load_run_config(a.config);
  if (!a.out.empty()) rc.output_dir = a.out;
  const RegionDataset dataset = read_dataset(rc.dataset);
  fs::create_directories(rc.output_dir);
  write_json(rc.output_dir / "resolved_config.json",
             {{"command", "sweep"}, {"config", run_config_to_json(rc)}, {"factors", a.factors}});
  const auto conditions = resolution_sweep(dataset, a.factors, rc.model, rc.train);
  for (const SweepCondition& c : conditions) {
    write_json(rc.output_dir / ("condition_f" + std::to_string(c.factor) + ".json"),
               sweep_condition_to_json(c));
  }
  const std::string csv = sweep_summary_csv(conditions);
  write_file(rc.output_dir / "sweep_summary.csv", csv);
  std::cout << csv;
  return kOk;
}

// --- export-attention ------------------------------------------------------

struct AttentionArgs {
  std::string checkpoint;
  std::string dataset;
  std::string out;
};

int cmd_export_attention(const AttentionArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const RegionDataset ds = read_dataset(a.dataset);
  const auto rows = export_attention(ckpt.model, ds);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_json(out / "resolved_config.json",
             {{"command", "export-attention"}, {"checkpoint", a.checkpoint}, {"dataset", a.dataset}});
  write_file(out / "attention.csv", attention_csv(rows));
  std::cout << "wrote " << rows.size() << " rows to " << (out / "attention.csv").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grid-level carbon emission estimation from imagery and POI rasters"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic region with known ground truth");
  synth_cmd->add_option("--spec", synth.spec, "Synthetic spec JSON (defaults when omitted)")
      ->check(CLI::ExistingFile);
  synth_cmd->add_option("--out", synth.out, "Output dataset directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a run config");
  train_cmd->add_option("--config", tr.config, "Run config JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--checkpoint", tr.checkpoint, "Train-state directory to resume from")
      ->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", tr.out, "Override output_dir");
  train_cmd->add_flag("--dry-run", tr.dry_run, "Validate and print the resolved config only");
  train_cmd->add_flag("--quiet", tr.quiet, "No per-epoch progress");

  GridArgs grid;
  auto* grid_cmd = app.add_subcommand("gridsearch", "Hyperparameter grid search");
  grid_cmd->add_option("--config", grid.config, "Run config JSON")->required()->check(CLI::ExistingFile);
  grid_cmd->add_option("--out", grid.out, "Override output_dir");
  grid_cmd->add_option("--jobs", grid.jobs, "Parallel trials")->check(CLI::PositiveNumber);
  grid_cmd->add_option("--budget", grid.budget, "Run only the first N trials");
  grid_cmd->add_option("--trial-epochs", grid.trial_epochs, "max_epochs per trial")
      ->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--dataset", ev.dataset, "Dataset directory")->required();
  eval_cmd->add_option("--out", ev.out, "Output directory")->required();
  eval_cmd->add_option("--split", ev.split, "train|valid|test|all")
      ->check(CLI::IsMember({"train", "valid", "test", "all"}));
  eval_cmd->add_option("--space", ev.space, "log|tonnes")->check(CLI::IsMember({"log", "tonnes"}));

  TransferArgs tf;
  auto* transfer_cmd = app.add_subcommand("transfer", "Apply a checkpoint to another region");
  transfer_cmd->add_option("--checkpoint", tf.checkpoint, "Checkpoint directory")->required();
  transfer_cmd->add_option("--target", tf.target, "Target dataset directory")->required();
  transfer_cmd->add_option("--out", tf.out, "Output directory")->required();
  transfer_cmd->add_option("--source-tag", tf.source_tag, "Label of the source region");
  transfer_cmd->add_flag("--calibrate", tf.calibrate, "Also report mean-deviation calibration");

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Retrain and evaluate at coarser resolutions");
  sweep_cmd->add_option("--config", sw.config, "Run config JSON")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--out", sw.out, "Override output_dir");
  sweep_cmd->add_option("--factors", sw.factors, "Aggregation factors, e.g. 1,2,3")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);

  AttentionArgs at;
  auto* attn_cmd =
      app.add_subcommand("export-attention", "Per-cell modality weights with emission deciles");
  attn_cmd->add_option("--checkpoint", at.checkpoint, "Checkpoint directory")->required();
  attn_cmd->add_option("--dataset", at.dataset, "Dataset directory")->required();
  attn_cmd->add_option("--out", at.out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) return cmd_synth(synth);
    if (*train_cmd) return cmd_train(tr);
    if (*grid_cmd) return cmd_gridsearch(grid);
    if (*eval_cmd) return cmd_eval(ev);
    if (*transfer_cmd) return cmd_transfer(tf);
    if (*sweep_cmd) return cmd_sweep(sw);
    if (*attn_cmd) return cmd_export_attention(at);
  } catch (const TrainingAborted& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kAborted;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
