#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vslnet/data.hpp"

namespace vslnet {

// Parameters of the planted-moment benchmark. Every video gets one query; rows
// inside the moment carry the query's concept pattern, the rest carry patterns
// of random distractor queries. All randomness derives from `seed`.
struct SyntheticConfig {
  std::uint64_t seed = 7;
  std::size_t train_samples = 1000;
  std::size_t val_samples = 200;
  std::size_t test_samples = 200;
  std::size_t min_raw_length = 40;
  std::size_t max_raw_length = 80;
  std::size_t feature_dim = 32;
  std::size_t vocab_size = 60;
  std::size_t embed_dim = 32;
  std::size_t min_query_tokens = 3;
  std::size_t max_query_tokens = 10;
  // Moment length as a fraction of the video, uniform in [min, max].
  double min_moment_fraction = 0.1;
  double max_moment_fraction = 0.35;
  double min_seconds_per_row = 0.5;
  double max_seconds_per_row = 1.5;
  std::size_t min_distractor_run = 3;
  std::size_t max_distractor_run = 12;
  double signal = 1.0;
  double noise = 0.6;
};

// Per-token visual concept vectors (vocab_size x feature_dim) implied by the seed.
std::vector<std::vector<double>> synthetic_concepts(const SyntheticConfig& config);

// The pattern rows inside a moment follow for a token multiset (before noise).
std::vector<double> synthetic_pattern(const std::vector<std::vector<double>>& concepts,
                                      const std::vector<std::size_t>& token_ids, double signal);

std::string synthetic_token(std::size_t id);

// Writes dataset.json, manifest.jsonl, embeddings.bin, vocab.txt and
// features/<video>.bin under out_dir. Returns the annotations written.
std::vector<MomentAnnotation> generate_synthetic_dataset(const SyntheticConfig& config,
                                                         const std::filesystem::path& out_dir);

}  // namespace vslnet
