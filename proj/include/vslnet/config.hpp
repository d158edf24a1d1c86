#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vslnet/evaluation.hpp"
#include "vslnet/synthetic.hpp"
#include "vslnet/training.hpp"

namespace vslnet {

// JSON forms of the configuration records. Readers start from `base` and
// override only the keys present; unknown keys raise ConfigError naming them.
nlohmann::ordered_json to_json(const ModelConfig& c);
nlohmann::ordered_json to_json(const TrainConfig& c);
nlohmann::ordered_json to_json(const SyntheticConfig& c);

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j, SyntheticConfig base = {});

struct DataPaths {
  std::string dataset;  // dataset directory or dataset.json
  std::string output;   // run directory
};

struct PredictOptions {
  std::string checkpoint;  // defaults to <output>/best.ckpt
  std::string split = "test";
  std::string strategy = "pm";
};

struct EvalOptions {
  std::string predictions;  // evaluate this file instead of running a checkpoint
  std::vector<double> thresholds = kDefaultThresholds;
};

// Everything one CLI invocation needs; written to the run directory before work starts.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SyntheticConfig synth;
  DataPaths data;
  PredictOptions predict;
  EvalOptions eval;
};

nlohmann::ordered_json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& file);

}  // namespace vslnet
