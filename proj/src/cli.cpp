#include "vslnet/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "vslnet/checkpoint.hpp"
#include "vslnet/config.hpp"

namespace vslnet {

namespace fs = std::filesystem;

namespace {

bool verbose() {
  const char* v = std::getenv("VSL_VERBOSE");
  return v && *v && std::string(v) != "0";
}

void write_json(const fs::path& file, const nlohmann::ordered_json& j) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary);
  if (!os) throw DataError("cannot write " + file.string());
  os << j.dump(2) << '\n';
}

// Flags shared by subcommands; optional values only override when given.
struct Overrides {
  std::string config;
  std::optional<std::string> dataset, output;
  std::optional<std::string> variant, dtype;
  std::optional<std::size_t> epochs, batch_size, patience, dim, max_length;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> checkpoint, split, strategy, predictions;
  std::optional<std::string> resume;
  std::optional<std::size_t> samples;
  std::optional<std::vector<std::size_t>> scales;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "JSON run config (sections: model, train, synth, data, predict, eval)")
      ->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", o.output, "Output directory");
}

void add_dataset(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-d,--dataset", o.dataset, "Dataset directory or dataset.json");
}

void add_model_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--variant", o.variant, "vslbase | vslnet | vslnet-l");
  cmd->add_option("--dtype", o.dtype, "f32 | f64");
  cmd->add_option("--dim", o.dim, "Hidden dimension");
  cmd->add_option("--max-length", o.max_length, "Feature sequence length n");
  cmd->add_option("--scales", o.scales, "Segment lengths for vslnet-l, e.g. --scales 8 12")
      ->expected(1, -1);
}

void add_eval_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint (default <out>/best.ckpt)");
  cmd->add_option("--split", o.split, "Dataset split to run on");
  cmd->add_option("--strategy", o.strategy, "Multi-scale candidate selection: pm | union");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.dataset) c.data.dataset = *o.dataset;
  if (o.output) c.data.output = *o.output;
  if (o.variant) c.model.variant = parse_variant(*o.variant);
  if (o.dtype) c.model.dtype = parse_dtype(*o.dtype);
  if (o.dim) c.model.dim = *o.dim;
  if (o.max_length) c.model.max_length = *o.max_length;
  if (o.scales) c.model.scales = *o.scales;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.patience) c.train.patience = *o.patience;
  if (o.lr) c.train.learning_rate = *o.lr;
  if (o.seed) {
    c.train.seed = *o.seed;
    c.synth.seed = *o.seed;
  }
  if (o.samples) {
    // 80/10/10 split of the requested total.
    c.synth.val_samples = *o.samples / 10;
    c.synth.test_samples = *o.samples / 10;
    c.synth.train_samples = *o.samples - c.synth.val_samples - c.synth.test_samples;
  }
  if (o.checkpoint) c.predict.checkpoint = *o.checkpoint;
  if (o.split) c.predict.split = *o.split;
  if (o.strategy) c.predict.strategy = *o.strategy;
  if (o.predictions) c.eval.predictions = *o.predictions;
  parse_strategy(c.predict.strategy);
  return c;
}

void require(const std::string& value, const char* what) {
  if (value.empty()) throw ConfigError(std::string("missing ") + what);
}

fs::path checkpoint_path(const RunConfig& c) {
  if (!c.predict.checkpoint.empty()) return c.predict.checkpoint;
  require(c.data.output, "--out (or --checkpoint)");
  return fs::path(c.data.output) / "best.ckpt";
}

// The checkpoint records the architecture it was trained with.
std::unique_ptr<Model> model_from_checkpoint(const fs::path& file, const ModelConfig& fallback) {
  const auto ckpt = read_checkpoint(file);
  ModelConfig mc = fallback;
  if (ckpt.metadata.contains("model")) mc = model_config_from_json(ckpt.metadata["model"]);
  auto model = std::make_unique<Model>(mc);
  restore_params(ckpt, model->params());
  return model;
}

std::vector<Prediction> run_prediction(const RunConfig& c, const Dataset& dataset) {
  const auto model = model_from_checkpoint(checkpoint_path(c), c.model);
  return predict(*model, dataset, c.predict.split, parse_strategy(c.predict.strategy));
}

int cmd_synth(const RunConfig& c, std::ostream& out) {
  require(c.data.output, "--out");
  const fs::path dir = c.data.output;
  // Only the generator settings, so identical requests give identical directories.
  write_json(dir / "synth_config.json", to_json(c.synth));
  const auto annotations = generate_synthetic_dataset(c.synth, dir);
  out << nlohmann::ordered_json{{"dataset", dir.string()}, {"samples", annotations.size()}}.dump()
      << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& c, const std::optional<std::string>& resume, std::ostream& out) {
  require(c.data.dataset, "--dataset");
  require(c.data.output, "--out");
  const fs::path dir = c.data.output;
  write_json(dir / "config.json", to_json(c));
  c.model.validate();
  c.train.validate();
  const Dataset dataset = load_dataset(c.data.dataset);
  // Input widths are fixed by the data; the stored config records them.
  RunConfig resolved = c;
  resolved.model.video_dim = dataset.descriptor.feature_dim;
  resolved.model.query_dim = dataset.embeddings.dim();
  write_json(dir / "config.json", to_json(resolved));
  TrainOptions opts;
  opts.output_dir = dir;
  if (resume) opts.resume_from = *resume;
  if (verbose()) opts.log = &std::cerr;
  const auto result = train(dataset, resolved.model, resolved.train, opts);
  nlohmann::ordered_json summary;
  summary["epochs_run"] = result.history.size();
  summary["best_epoch"] = result.best_epoch;
  summary["best_val_miou"] = result.best_miou;
  summary["stopped_early"] = result.stopped_early;
  write_json(dir / "summary.json", summary);
  out << summary.dump() << '\n';
  return kExitOk;
}

int cmd_predict(const RunConfig& c, std::ostream& out) {
  require(c.data.dataset, "--dataset");
  require(c.data.output, "--out");
  const fs::path dir = c.data.output;
  write_json(dir / "predict_config.json", to_json(c));
  const Dataset dataset = load_dataset(c.data.dataset);
  const auto preds = run_prediction(c, dataset);
  const fs::path file = c.eval.predictions.empty()
                            ? dir / ("predictions_" + c.predict.split + ".jsonl")
                            : fs::path(c.eval.predictions);
  write_predictions(file, preds);
  out << nlohmann::ordered_json{{"predictions", file.string()}, {"count", preds.size()}}.dump()
      << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  require(c.data.dataset, "--dataset");
  require(c.data.output, "--out");
  const fs::path dir = c.data.output;
  write_json(dir / "eval_config.json", to_json(c));
  const Dataset dataset = load_dataset(c.data.dataset);
  const auto preds = c.eval.predictions.empty() ? run_prediction(c, dataset)
                                                : read_predictions(c.eval.predictions);
  std::vector<MomentAnnotation> truth;
  for (const auto* a : dataset.split(c.predict.split)) truth.push_back(*a);
  const auto report = evaluate(preds, truth, c.eval.thresholds);
  const fs::path report_dir = dir / ("report_" + c.predict.split);
  write_report(report_dir, report);
  nlohmann::ordered_json j;
  j["report"] = report_dir.string();
  j["samples"] = report.samples.size();
  j["miou"] = report.miou;
  for (std::size_t t = 0; t < report.thresholds.size(); ++t) {
    char key[32];
    std::snprintf(key, sizeof(key), "%g", report.thresholds[t]);
    j["rank1"][key] = report.rank1[t];
  }
  out << j.dump() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Span-based video moment localization: synthetic data, training, prediction and "
               "evaluation.\nSet VSL_VERBOSE=1 to stream per-epoch logs to stderr.",
               "vslnet"};
  app.require_subcommand(1);
  Overrides o;

  auto* synth = app.add_subcommand("synth", "Write a synthetic planted-moment dataset");
  add_common(synth, o);
  synth->add_option("--seed", o.seed, "Generator seed");
  synth->add_option("--samples", o.samples, "Total samples, split 80/10/10 into train/val/test");

  auto* trn = app.add_subcommand("train", "Train a model; writes best.ckpt, last.ckpt and logs");
  add_common(trn, o);
  add_dataset(trn, o);
  add_model_flags(trn, o);
  trn->add_option("--epochs", o.epochs, "Maximum epochs");
  trn->add_option("--batch-size", o.batch_size, "Mini-batch size");
  trn->add_option("--lr", o.lr, "Base learning rate");
  trn->add_option("--patience", o.patience, "Early-stopping patience in epochs");
  trn->add_option("--seed", o.seed, "Training seed (shuffling and dropout)");
  trn->add_option("--resume", o.resume, "Continue from a last.ckpt of the same config");

  auto* pred = app.add_subcommand("predict", "Write a prediction file from a checkpoint");
  add_common(pred, o);
  add_dataset(pred, o);
  add_eval_flags(pred, o);
  pred->add_option("--predictions", o.predictions, "Output file (default <out>/predictions_<split>.jsonl)");

  auto* ev = app.add_subcommand("eval", "Write an evaluation report from predictions or a checkpoint");
  add_common(ev, o);
  add_dataset(ev, o);
  add_eval_flags(ev, o);
  ev->add_option("--predictions", o.predictions, "Evaluate this prediction file instead of a checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "vslnet: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    const RunConfig c = resolve(o);
    if (synth->parsed()) return cmd_synth(c, out);
    if (trn->parsed()) return cmd_train(c, o.resume, out);
    if (pred->parsed()) return cmd_predict(c, out);
    return cmd_eval(c, out);
  } catch (const NumericalError& e) {
    err << "vslnet: numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DataError& e) {
    err << "vslnet: data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "vslnet: data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ConfigError& e) {
    err << "vslnet: config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "vslnet: config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "vslnet: error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace vslnet
