#include "vslnet/synthetic.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <random>

namespace vslnet {

namespace fs = std::filesystem;

namespace {

// Independent deterministic streams for concepts, embeddings and samples.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}

void validate(const SyntheticConfig& c) {
  if (c.train_samples + c.val_samples + c.test_samples == 0) {
    throw ConfigError("synthetic dataset needs at least one sample");
  }
  if (c.min_raw_length == 0 || c.min_raw_length > c.max_raw_length) {
    throw ConfigError("synthetic raw length range is invalid");
  }
  if (c.vocab_size == 0 || c.feature_dim == 0 || c.embed_dim == 0) {
    throw ConfigError("synthetic vocab/feature/embedding sizes must be positive");
  }
  if (c.min_query_tokens == 0 || c.min_query_tokens > c.max_query_tokens) {
    throw ConfigError("synthetic query length range is invalid");
  }
  if (!(c.min_moment_fraction > 0.0 && c.min_moment_fraction <= c.max_moment_fraction &&
        c.max_moment_fraction <= 1.0)) {
    throw ConfigError("synthetic moment fraction range must lie in (0, 1]");
  }
  if (!(c.min_seconds_per_row > 0.0 && c.min_seconds_per_row <= c.max_seconds_per_row)) {
    throw ConfigError("synthetic seconds-per-row range is invalid");
  }
  if (c.min_distractor_run == 0 || c.min_distractor_run > c.max_distractor_run) {
    throw ConfigError("synthetic distractor run range is invalid");
  }
}

std::vector<std::size_t> random_query(std::mt19937_64& rng, const SyntheticConfig& c) {
  std::uniform_int_distribution<std::size_t> len(c.min_query_tokens, c.max_query_tokens);
  std::uniform_int_distribution<std::size_t> tok(0, c.vocab_size - 1);
  std::vector<std::size_t> ids(len(rng));
  for (auto& id : ids) id = tok(rng);
  return ids;
}

}  // namespace

std::string synthetic_token(std::size_t id) { return "tok" + std::to_string(id); }

std::vector<std::vector<double>> synthetic_concepts(const SyntheticConfig& config) {
  validate(config);
  auto rng = stream(config.seed, 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> concepts(config.vocab_size,
                                            std::vector<double>(config.feature_dim));
  for (auto& c : concepts)
    for (auto& v : c) v = gauss(rng);
  return concepts;
}

std::vector<double> synthetic_pattern(const std::vector<std::vector<double>>& concepts,
                                      const std::vector<std::size_t>& token_ids, double signal) {
  std::vector<double> p(concepts.at(0).size(), 0.0);
  for (auto id : token_ids)
    for (std::size_t j = 0; j < p.size(); ++j) p[j] += concepts.at(id)[j];
  const double s = signal / std::sqrt(static_cast<double>(token_ids.size()));
  for (auto& v : p) v *= s;
  return p;
}

std::vector<MomentAnnotation> generate_synthetic_dataset(const SyntheticConfig& config,
                                                         const fs::path& out_dir) {
  validate(config);
  const auto concepts = synthetic_concepts(config);

  std::vector<std::string> vocab;
  for (std::size_t i = 0; i < config.vocab_size; ++i) vocab.push_back(synthetic_token(i));
  {
    auto rng = stream(config.seed, 2);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<float> table(config.vocab_size * config.embed_dim);
    for (auto& v : table) v = static_cast<float>(gauss(rng));
    write_embeddings(out_dir / "embeddings.bin", out_dir / "vocab.txt", vocab, config.embed_dim,
                     table);
  }

  auto rng = stream(config.seed, 3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> raw_len(config.min_raw_length, config.max_raw_length);
  std::uniform_int_distribution<std::size_t> run_len(config.min_distractor_run,
                                                     config.max_distractor_run);

  const std::size_t total = config.train_samples + config.val_samples + config.test_samples;
  std::vector<MomentAnnotation> annotations;
  annotations.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    MomentAnnotation a;
    char name[32];
    std::snprintf(name, sizeof(name), "v%06zu", i);
    a.video_id = name;
    a.id = "s" + std::string(name + 1);
    a.split = i < config.train_samples                        ? "train"
              : i < config.train_samples + config.val_samples ? "val"
                                                              : "test";

    const std::size_t rows = raw_len(rng);
    const double spr = config.min_seconds_per_row +
                       (config.max_seconds_per_row - config.min_seconds_per_row) * unit(rng);
    a.duration = static_cast<double>(rows) * spr;
    const double frac = config.min_moment_fraction +
                        (config.max_moment_fraction - config.min_moment_fraction) * unit(rng);
    const double length = frac * a.duration;
    a.start = (a.duration - length) * unit(rng);
    a.end = std::min(a.duration, a.start + length);

    const auto query_ids = random_query(rng, config);
    for (std::size_t k = 0; k < query_ids.size(); ++k) {
      std::string t = synthetic_token(query_ids[k]);
      if (k == 0) t[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(t[0])));
      a.query += (k ? " " : "") + t;
    }
    a.tokens = tokenize(a.query);

    RawFeatures raw;
    raw.rows = rows;
    raw.dim = config.feature_dim;
    raw.values.assign(rows * config.feature_dim, 0.0f);
    std::vector<double> pattern(config.feature_dim, 0.0);
    std::size_t run_left = 0;
    const auto target = synthetic_pattern(concepts, query_ids, config.signal);
    bool any_inside = false;
    for (std::size_t r = 0; r < rows; ++r) {
      if (run_left == 0) {
        run_left = run_len(rng);
        if (unit(rng) < 0.3) {
          std::fill(pattern.begin(), pattern.end(), 0.0);
        } else {
          pattern = synthetic_pattern(concepts, random_query(rng, config), config.signal);
        }
      }
      --run_left;
      const double center = (static_cast<double>(r) + 0.5) / static_cast<double>(rows) * a.duration;
      const bool inside = center >= a.start && center <= a.end;
      any_inside = any_inside || inside;
      const auto& src = inside ? target : pattern;
      for (std::size_t j = 0; j < config.feature_dim; ++j) {
        raw.values[r * config.feature_dim + j] =
            static_cast<float>(src[j] + config.noise * gauss(rng));
      }
    }
    if (!any_inside) {
      const double mid = 0.5 * (a.start + a.end);
      const auto r = std::min<std::size_t>(
          rows - 1, static_cast<std::size_t>(mid / a.duration * static_cast<double>(rows)));
      for (std::size_t j = 0; j < config.feature_dim; ++j) {
        raw.values[r * config.feature_dim + j] =
            static_cast<float>(target[j] + config.noise * gauss(rng));
      }
    }
    write_feature_file(out_dir / "features" / (a.video_id + ".bin"), raw);
    annotations.push_back(std::move(a));
  }

  write_manifest(out_dir / "manifest.jsonl", annotations);
  DatasetDescriptor d;
  d.feature_dim = config.feature_dim;
  write_dataset_descriptor(out_dir / "dataset.json", d);
  return annotations;
}

}  // namespace vslnet
