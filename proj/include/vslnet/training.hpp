#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vslnet/losses.hpp"
#include "vslnet/optim.hpp"

namespace vslnet {

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 100;
  double learning_rate = 1e-4;
  double clip_norm = 1.0;
  double dropout = 0.2;
  std::size_t patience = 10;
  std::uint64_t seed = 1;
  std::string train_split = "train";
  std::string validation_split = "val";

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean total loss over samples
  double span = 0.0;
  double qgh = 0.0;
  double npm = 0.0;
  double validation_miou = 0.0;
  double learning_rate = 0.0;  // rate used by the epoch's last step
  double grad_norm = 0.0;      // mean pre-clip global norm
  bool improved = false;

  nlohmann::ordered_json to_json() const;
};

// Stable 64-bit hash of the model and training configuration. A resumed run
// must present the same fingerprint as the checkpoint it continues.
std::uint64_t config_fingerprint(const ModelConfig& model, const TrainConfig& train);

struct TrainOptions {
  // Where best.ckpt, last.ckpt and train_log.jsonl go; empty keeps everything in memory.
  std::filesystem::path output_dir;
  // Continue from a last.ckpt written by an earlier run of the same config.
  std::filesystem::path resume_from;
  std::ostream* log = nullptr;  // receives the JSON epoch lines as well
  // Replaces the validation mIoU computation (1-based epoch).
  std::function<double(const Model&, std::size_t)> validator;
};

struct TrainResult {
  std::unique_ptr<Model> model;  // parameters of the best validation epoch
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;
  double best_miou = 0.0;
  bool stopped_early = false;
};

// Mini-batch Adam training with global-norm clipping, linear learning-rate
// decay and early stopping on validation mIoU. Throws NumericalError on a
// non-finite loss or gradient.
TrainResult train(const Dataset& dataset, const ModelConfig& model_config,
                  const TrainConfig& train_config, const TrainOptions& options = {});

// Validation mIoU of `model` on a split, as used for early stopping.
double split_miou(const Model& model, const Dataset& dataset, const std::string& split);

// Loads parameters saved by train() into a freshly built model.
std::unique_ptr<Model> load_model(const std::filesystem::path& checkpoint,
                                  const ModelConfig& config);

}  // namespace vslnet
