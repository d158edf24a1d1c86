#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vslnet/ops.hpp"

namespace vslnet {

// Named collection of trainable leaves, kept in registration order so that
// serialization and optimizer state are deterministic.
class ParamStore {
 public:
  explicit ParamStore(DType dtype = DType::kFloat64) : dtype_(dtype) {}

  Tensor& add(const std::string& path, Tensor value);
  const Tensor& get(const std::string& path) const;
  Tensor& get(const std::string& path);
  bool contains(const std::string& path) const { return index_.count(path) != 0; }

  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;
  DType dtype() const { return dtype_; }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

  void zero_grad();
  // Copies values from another store with identical paths and shapes.
  void copy_values_from(const ParamStore& other);

 private:
  DType dtype_;
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Uniform Xavier/Glorot initialization.
Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng,
                      DType dtype);

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  static Linear create(ParamStore& store, const std::string& path, std::size_t in,
                       std::size_t out, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x) const;
};

struct LstmWeights {
  Tensor w_input;   // [d_in x 4d], gate blocks (i, f, g, o)
  Tensor w_hidden;  // [d x 4d]
  Tensor bias;      // [4d]

  static LstmWeights create(ParamStore& store, const std::string& path, std::size_t in,
                            std::size_t hidden, std::mt19937_64& rng);
  std::size_t hidden_size() const { return w_hidden.dim(0); }
};

struct LstmState {
  Tensor h;  // [d]
  Tensor c;  // [d]
};

// One LSTM cell update built from tape primitives.
LstmState lstm_step(const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev,
                    const LstmWeights& weights);

struct AttentionWeights {
  Linear query, key, value, output;

  static AttentionWeights create(ParamStore& store, const std::string& path, std::size_t dim,
                                 std::mt19937_64& rng);
};

// Scaled dot-product self-attention over x[n x d] with `heads` heads. Keys with
// mask 0 receive zero weight.
Tensor multi_head_attention(const Tensor& x, std::span<const std::uint8_t> mask, std::size_t heads,
                            const AttentionWeights& weights);

}  // namespace vslnet
