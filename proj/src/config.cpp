#include "vslnet/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace vslnet {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " config must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + section + " config");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const char* section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(section) + "." + key + " has the wrong type");
  }
}

// Negative numbers must not wrap into huge sizes.
void read_size(const json& j, const char* key, std::size_t& out, const char* section) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(std::string(section) + "." + key + " must be a non-negative integer");
  }
  out = v.get<std::size_t>();
}

json ratio_to_json(double r) { return std::isinf(r) ? json("inf") : json(r); }

double ratio_from_json(const json& v) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf" || s == "INF" || s == "infinity") return kInfiniteExtension;
    throw ConfigError("model.extension_ratio must be a number or \"inf\", got \"" + s + "\"");
  }
  if (!v.is_number()) throw ConfigError("model.extension_ratio must be a number or \"inf\"");
  return v.get<double>();
}

}  // namespace

ordered_json to_json(const ModelConfig& c) {
  ordered_json j;
  j["variant"] = variant_name(c.variant);
  j["dim"] = c.dim;
  j["heads"] = c.heads;
  j["kernel_width"] = c.kernel_width;
  j["conv_layers"] = c.conv_layers;
  j["video_dim"] = c.video_dim;
  j["query_dim"] = c.query_dim;
  j["max_length"] = c.max_length;
  j["extension_ratio"] = ratio_to_json(c.extension_ratio);
  j["scales"] = c.scales;
  j["positional_encoding"] = c.positional_encoding;
  j["dtype"] = dtype_name(c.dtype);
  j["init_seed"] = c.init_seed;
  return j;
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  const char* s = "model";
  check_keys(j, s,
             {"variant", "dim", "heads", "kernel_width", "conv_layers", "video_dim", "query_dim",
              "max_length", "extension_ratio", "scales", "positional_encoding", "dtype",
              "init_seed"});
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  read_size(j, "dim", c.dim, s);
  read_size(j, "heads", c.heads, s);
  read_size(j, "kernel_width", c.kernel_width, s);
  read_size(j, "conv_layers", c.conv_layers, s);
  read_size(j, "video_dim", c.video_dim, s);
  read_size(j, "query_dim", c.query_dim, s);
  read_size(j, "max_length", c.max_length, s);
  if (j.contains("extension_ratio")) c.extension_ratio = ratio_from_json(j.at("extension_ratio"));
  read(j, "scales", c.scales, s);
  read(j, "positional_encoding", c.positional_encoding, s);
  if (j.contains("dtype")) c.dtype = parse_dtype(j.at("dtype").get<std::string>());
  read(j, "init_seed", c.init_seed, s);
  return c;
}

ordered_json to_json(const TrainConfig& c) {
  ordered_json j;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["clip_norm"] = c.clip_norm;
  j["dropout"] = c.dropout;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["train_split"] = c.train_split;
  j["validation_split"] = c.validation_split;
  return j;
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  const char* s = "train";
  check_keys(j, s,
             {"batch_size", "epochs", "learning_rate", "clip_norm", "dropout", "patience", "seed",
              "train_split", "validation_split"});
  read_size(j, "batch_size", c.batch_size, s);
  read_size(j, "epochs", c.epochs, s);
  read(j, "learning_rate", c.learning_rate, s);
  read(j, "clip_norm", c.clip_norm, s);
  read(j, "dropout", c.dropout, s);
  read_size(j, "patience", c.patience, s);
  read(j, "seed", c.seed, s);
  read(j, "train_split", c.train_split, s);
  read(j, "validation_split", c.validation_split, s);
  return c;
}

ordered_json to_json(const SyntheticConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["train_samples"] = c.train_samples;
  j["val_samples"] = c.val_samples;
  j["test_samples"] = c.test_samples;
  j["min_raw_length"] = c.min_raw_length;
  j["max_raw_length"] = c.max_raw_length;
  j["feature_dim"] = c.feature_dim;
  j["vocab_size"] = c.vocab_size;
  j["embed_dim"] = c.embed_dim;
  j["min_query_tokens"] = c.min_query_tokens;
  j["max_query_tokens"] = c.max_query_tokens;
  j["min_moment_fraction"] = c.min_moment_fraction;
  j["max_moment_fraction"] = c.max_moment_fraction;
  j["min_seconds_per_row"] = c.min_seconds_per_row;
  j["max_seconds_per_row"] = c.max_seconds_per_row;
  j["min_distractor_run"] = c.min_distractor_run;
  j["max_distractor_run"] = c.max_distractor_run;
  j["signal"] = c.signal;
  j["noise"] = c.noise;
  return j;
}

SyntheticConfig synthetic_config_from_json(const json& j, SyntheticConfig c) {
  const char* s = "synth";
  check_keys(j, s,
             {"seed", "train_samples", "val_samples", "test_samples", "min_raw_length",
              "max_raw_length", "feature_dim", "vocab_size", "embed_dim", "min_query_tokens",
              "max_query_tokens", "min_moment_fraction", "max_moment_fraction",
              "min_seconds_per_row", "max_seconds_per_row", "min_distractor_run",
              "max_distractor_run", "signal", "noise"});
  read(j, "seed", c.seed, s);
  read_size(j, "train_samples", c.train_samples, s);
  read_size(j, "val_samples", c.val_samples, s);
  read_size(j, "test_samples", c.test_samples, s);
  read_size(j, "min_raw_length", c.min_raw_length, s);
  read_size(j, "max_raw_length", c.max_raw_length, s);
  read_size(j, "feature_dim", c.feature_dim, s);
  read_size(j, "vocab_size", c.vocab_size, s);
  read_size(j, "embed_dim", c.embed_dim, s);
  read_size(j, "min_query_tokens", c.min_query_tokens, s);
  read_size(j, "max_query_tokens", c.max_query_tokens, s);
  read(j, "min_moment_fraction", c.min_moment_fraction, s);
  read(j, "max_moment_fraction", c.max_moment_fraction, s);
  read(j, "min_seconds_per_row", c.min_seconds_per_row, s);
  read(j, "max_seconds_per_row", c.max_seconds_per_row, s);
  read_size(j, "min_distractor_run", c.min_distractor_run, s);
  read_size(j, "max_distractor_run", c.max_distractor_run, s);
  read(j, "signal", c.signal, s);
  read(j, "noise", c.noise, s);
  return c;
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  j["synth"] = to_json(c.synth);
  j["data"] = {{"dataset", c.data.dataset}, {"output", c.data.output}};
  j["predict"] = {{"checkpoint", c.predict.checkpoint},
                  {"split", c.predict.split},
                  {"strategy", c.predict.strategy}};
  j["eval"] = {{"predictions", c.eval.predictions}, {"thresholds", c.eval.thresholds}};
  return j;
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  check_keys(j, "run", {"model", "train", "synth", "data", "predict", "eval"});
  if (j.contains("model")) c.model = model_config_from_json(j["model"], c.model);
  if (j.contains("train")) c.train = train_config_from_json(j["train"], c.train);
  if (j.contains("synth")) c.synth = synthetic_config_from_json(j["synth"], c.synth);
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, "data", {"dataset", "output"});
    read(d, "dataset", c.data.dataset, "data");
    read(d, "output", c.data.output, "data");
  }
  if (j.contains("predict")) {
    const auto& p = j["predict"];
    check_keys(p, "predict", {"checkpoint", "split", "strategy"});
    read(p, "checkpoint", c.predict.checkpoint, "predict");
    read(p, "split", c.predict.split, "predict");
    read(p, "strategy", c.predict.strategy, "predict");
    parse_strategy(c.predict.strategy);
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    check_keys(e, "eval", {"predictions", "thresholds"});
    read(e, "predictions", c.eval.predictions, "eval");
    read(e, "thresholds", c.eval.thresholds, "eval");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw DataError("cannot open config file " + file.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + file.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace vslnet
