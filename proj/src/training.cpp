#include "vslnet/training.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "vslnet/checkpoint.hpp"
#include "vslnet/config.hpp"
#include "vslnet/evaluation.hpp"

namespace vslnet {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (patience == 0) throw ConfigError("patience must be at least 1");
}

nlohmann::ordered_json EpochLog::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["loss"] = loss;
  j["losses"] = {{"span", span}, {"qgh", qgh}, {"npm", npm}};
  j["val_miou"] = validation_miou;
  j["lr"] = learning_rate;
  j["grad_norm"] = grad_norm;
  j["improved"] = improved;
  return j;
}

std::uint64_t config_fingerprint(const ModelConfig& model, const TrainConfig& train) {
  // FNV-1a over the canonical (key-sorted) JSON text.
  const nlohmann::json j = {{"model", nlohmann::json::parse(vslnet::to_json(model).dump())},
                            {"train", nlohmann::json::parse(vslnet::to_json(train).dump())}};
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

double split_miou(const Model& model, const Dataset& dataset, const std::string& split) {
  std::vector<MomentAnnotation> truth;
  for (const auto* a : dataset.split(split)) truth.push_back(*a);
  if (truth.empty()) throw DataError("split '" + split + "' has no samples to validate on");
  const auto preds = predict(model, dataset, split);
  return evaluate(preds, truth).miou;
}

std::unique_ptr<Model> load_model(const fs::path& checkpoint, const ModelConfig& config) {
  auto model = std::make_unique<Model>(config);
  restore_params(read_checkpoint(checkpoint), model->params());
  return model;
}

namespace {

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
  return buf;
}

std::mt19937_64 epoch_stream(std::uint64_t seed, std::size_t epoch, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), purpose};
  return std::mt19937_64(seq);
}

struct Snapshot {
  std::vector<Tensor> values;
};

Snapshot take_snapshot(const ParamStore& params) {
  Snapshot s;
  for (const auto& [_, t] : params.entries()) s.values.push_back(t.detach().clone());
  return s;
}

void apply_snapshot(const Snapshot& s, ParamStore& params) {
  auto& e = params.entries();
  for (std::size_t i = 0; i < e.size(); ++i) e[i].second.assign(s.values[i].values());
}

std::string finite_or_str(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

TrainResult train(const Dataset& dataset, const ModelConfig& model_config,
                  const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  model_config.validate();
  if (dataset.descriptor.feature_dim != model_config.video_dim) {
    throw ConfigError("model.video_dim " + std::to_string(model_config.video_dim) +
                      " does not match the dataset feature dim " +
                      std::to_string(dataset.descriptor.feature_dim));
  }
  if (dataset.embeddings.dim() != model_config.query_dim) {
    throw ConfigError("model.query_dim " + std::to_string(model_config.query_dim) +
                      " does not match the embedding dim " +
                      std::to_string(dataset.embeddings.dim()));
  }

  const LabelConfig labels = model_config.labels();
  std::vector<PreparedSample> samples;
  for (const auto* a : dataset.split(cfg.train_split)) {
    samples.push_back(prepare_sample(dataset, *a, labels));
  }
  if (samples.empty()) throw DataError("split '" + cfg.train_split + "' has no training samples");

  TrainResult result;
  result.model = std::make_unique<Model>(model_config);
  Model& model = *result.model;
  ParamStore& params = model.params();

  const std::size_t steps_per_epoch = (samples.size() + cfg.batch_size - 1) / cfg.batch_size;
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = cfg.learning_rate;
  adam_cfg.total_steps = steps_per_epoch * cfg.epochs;
  AdamState adam = AdamState::create(params, adam_cfg);

  const std::uint64_t fingerprint = config_fingerprint(model_config, cfg);
  const bool on_disk = !options.output_dir.empty();
  if (on_disk) fs::create_directories(options.output_dir);

  std::size_t first_epoch = 1;
  std::size_t bad_epochs = 0;
  double best = -std::numeric_limits<double>::infinity();
  Snapshot best_snapshot;

  if (!options.resume_from.empty()) {
    const auto ckpt = read_checkpoint(options.resume_from);
    const auto stored = ckpt.metadata.value("fingerprint", std::string());
    if (stored != hex(fingerprint)) {
      throw ConfigError("checkpoint " + options.resume_from.string() + " was written for config " +
                        stored + ", current config is " + hex(fingerprint));
    }
    restore_params(ckpt, params);
    restore_adam(ckpt, params, adam);
    first_epoch = ckpt.metadata.at("epoch").get<std::size_t>() + 1;
    bad_epochs = ckpt.metadata.at("bad_epochs").get<std::size_t>();
    result.best_epoch = ckpt.metadata.at("best_epoch").get<std::size_t>();
    best = ckpt.metadata.at("best_miou").get<double>();
    for (const auto& h : ckpt.metadata.at("history")) {
      EpochLog e;
      e.epoch = h.at("epoch");
      e.loss = h.at("loss");
      e.span = h.at("losses").at("span");
      e.qgh = h.at("losses").at("qgh");
      e.npm = h.at("losses").at("npm");
      e.validation_miou = h.at("val_miou");
      e.learning_rate = h.at("lr");
      e.grad_norm = h.at("grad_norm");
      e.improved = h.at("improved");
      result.history.push_back(e);
    }
    const fs::path best_file = options.resume_from.parent_path() / "best.ckpt";
    if (fs::exists(best_file)) {
      Model tmp(model_config);
      restore_params(read_checkpoint(best_file), tmp.params());
      best_snapshot = take_snapshot(tmp.params());
    } else {
      best_snapshot = take_snapshot(params);
    }
    if (bad_epochs >= cfg.patience) result.stopped_early = true;
  }

  auto metadata = [&](std::size_t epoch) {
    nlohmann::json m;
    m["epoch"] = epoch;
    m["best_epoch"] = result.best_epoch;
    m["best_miou"] = best;
    m["bad_epochs"] = bad_epochs;
    m["fingerprint"] = hex(fingerprint);
    m["model"] = nlohmann::json::parse(to_json(model_config).dump());
    m["train"] = nlohmann::json::parse(to_json(cfg).dump());
    return m;
  };

  std::ofstream log_file;
  if (on_disk) {
    log_file.open(options.output_dir / "train_log.jsonl",
                  options.resume_from.empty() ? std::ios::trunc : std::ios::app);
  }

  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
  std::vector<std::size_t> order(samples.size());
  for (std::size_t epoch = first_epoch; epoch <= cfg.epochs && !result.stopped_early; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = epoch_stream(cfg.seed, epoch, 1);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    auto dropout_rng = epoch_stream(cfg.seed, epoch, 2);
    ForwardContext ctx{true, cfg.dropout, &dropout_rng};

    EpochLog log;
    log.epoch = epoch;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(samples.size(), lo + cfg.batch_size);
      params.zero_grad();
      for (std::size_t k = lo; k < hi; ++k) {
        const PreparedSample& s = samples[order[k]];
        const ForwardOutput out = model.forward(make_input(s, model_config.dtype), ctx);
        const LossComponents c = sample_losses(model, out, s);
        const Tensor loss = total_loss(model_config.variant, c);
        const double value = loss.item();
        if (!std::isfinite(value)) {
          throw NumericalError("non-finite loss on sample " + s.id + " at epoch " +
                               std::to_string(epoch) + " step " + std::to_string(adam.step + 1) +
                               ": lr " + finite_or_str(scheduled_learning_rate(adam_cfg, adam.step)) +
                               ", grad norm so far " + finite_or_str(global_grad_norm(params)));
        }
        log.loss += value;
        log.span += c.span->item();
        if (c.qgh) log.qgh += c.qgh->item();
        if (c.npm) log.npm += c.npm->item();
        scale(loss, inv_batch).backward();
      }
      const double norm = clip_global_norm(params, cfg.clip_norm);
      if (!std::isfinite(norm)) {
        throw NumericalError("non-finite gradient norm at epoch " + std::to_string(epoch) +
                             " step " + std::to_string(adam.step + 1) + ": lr " +
                             finite_or_str(scheduled_learning_rate(adam_cfg, adam.step)));
      }
      log.grad_norm += norm;
      log.learning_rate = adam_step(adam, params).learning_rate;
    }
    const double n = static_cast<double>(samples.size());
    log.loss /= n;
    log.span /= n;
    log.qgh /= n;
    log.npm /= n;
    log.grad_norm /= static_cast<double>(steps_per_epoch);

    log.validation_miou = options.validator ? options.validator(model, epoch)
                                            : split_miou(model, dataset, cfg.validation_split);
    if (log.validation_miou > best) {
      best = log.validation_miou;
      result.best_epoch = epoch;
      bad_epochs = 0;
      log.improved = true;
      best_snapshot = take_snapshot(params);
      if (on_disk) write_checkpoint(options.output_dir / "best.ckpt", params, nullptr, metadata(epoch));
    } else if (++bad_epochs >= cfg.patience) {
      result.stopped_early = true;
    }
    result.history.push_back(log);

    const std::string line = log.to_json().dump();
    if (options.log) *options.log << line << '\n' << std::flush;
    if (on_disk) {
      log_file << line << '\n' << std::flush;
      auto meta = metadata(epoch);
      meta["history"] = nlohmann::json::array();
      for (const auto& h : result.history) {
        meta["history"].push_back(nlohmann::json::parse(h.to_json().dump()));
      }
      write_checkpoint(options.output_dir / "last.ckpt", params, &adam, meta);
    }
  }

  if (!best_snapshot.values.empty()) apply_snapshot(best_snapshot, params);
  result.best_miou = best;
  return result;
}

}  // namespace vslnet
