#include "vslnet/layers.hpp"

#include <cmath>

namespace vslnet {

Tensor& ParamStore::add(const std::string& path, Tensor value) {
  if (index_.count(path)) throw ContractError("duplicate parameter path '" + path + "'");
  if (value.dtype() != dtype_) value = value.to(dtype_);
  value.set_requires_grad(true);
  index_.emplace(path, entries_.size());
  entries_.emplace_back(path, std::move(value));
  return entries_.back().second;
}

const Tensor& ParamStore::get(const std::string& path) const {
  auto it = index_.find(path);
  if (it == index_.end()) throw ContractError("unknown parameter path '" + path + "'");
  return entries_[it->second].second;
}

Tensor& ParamStore::get(const std::string& path) {
  auto it = index_.find(path);
  if (it == index_.end()) throw ContractError("unknown parameter path '" + path + "'");
  return entries_[it->second].second;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.size() != size()) throw ContractError("parameter stores differ in size");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& [path, src] = other.entries_[i];
    auto& [own_path, dst] = entries_[i];
    if (path != own_path || src.shape() != dst.shape()) {
      throw ContractError("parameter mismatch at '" + own_path + "'");
    }
    dst.assign(src.values());
  }
}

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng,
                      DType dtype) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(shape_numel(shape));
  for (auto& e : v) e = dist(rng);
  return Tensor::from_values(std::move(shape), v, dtype);
}

Linear Linear::create(ParamStore& store, const std::string& path, std::size_t in, std::size_t out,
                      std::mt19937_64& rng) {
  Linear l;
  l.weight = store.add(path + "/weight", xavier_uniform({in, out}, in, out, rng, store.dtype()));
  l.bias = store.add(path + "/bias", Tensor::zeros({out}, store.dtype()));
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return add_row_vector(matmul(x, weight), bias); }

LstmWeights LstmWeights::create(ParamStore& store, const std::string& path, std::size_t in,
                                std::size_t hidden, std::mt19937_64& rng) {
  LstmWeights w;
  w.w_input = store.add(path + "/w_input",
                        xavier_uniform({in, 4 * hidden}, in, 4 * hidden, rng, store.dtype()));
  w.w_hidden = store.add(path + "/w_hidden", xavier_uniform({hidden, 4 * hidden}, hidden,
                                                            4 * hidden, rng, store.dtype()));
  w.bias = store.add(path + "/bias", Tensor::zeros({4 * hidden}, store.dtype()));
  return w;
}

LstmState lstm_step(const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev,
                    const LstmWeights& weights) {
  const std::size_t d = weights.hidden_size();
  if (h_prev.numel() != d || c_prev.numel() != d || x_t.numel() != weights.w_input.dim(0)) {
    throw ShapeError("lstm_step: x " + shape_str(x_t.shape()) + ", h " + shape_str(h_prev.shape()) +
                     ", c " + shape_str(c_prev.shape()) + " for hidden size " + std::to_string(d));
  }
  const Tensor x_row = reshape(x_t, {1, x_t.numel()});
  const Tensor h_row = reshape(h_prev, {1, d});
  const Tensor gates = add_row_vector(
      add(matmul(x_row, weights.w_input), matmul(h_row, weights.w_hidden)), weights.bias);
  const Tensor i = sigmoid(slice_cols(gates, 0, d));
  const Tensor f = sigmoid(slice_cols(gates, d, 2 * d));
  const Tensor g = tanh(slice_cols(gates, 2 * d, 3 * d));
  const Tensor o = sigmoid(slice_cols(gates, 3 * d, 4 * d));
  const Tensor c = add(mul(f, reshape(c_prev, {1, d})), mul(i, g));
  const Tensor h = mul(o, tanh(c));
  return {reshape(h, {d}), reshape(c, {d})};
}

AttentionWeights AttentionWeights::create(ParamStore& store, const std::string& path,
                                          std::size_t dim, std::mt19937_64& rng) {
  AttentionWeights w;
  w.query = Linear::create(store, path + "/query", dim, dim, rng);
  w.key = Linear::create(store, path + "/key", dim, dim, rng);
  w.value = Linear::create(store, path + "/value", dim, dim, rng);
  w.output = Linear::create(store, path + "/output", dim, dim, rng);
  return w;
}

Tensor multi_head_attention(const Tensor& x, std::span<const std::uint8_t> mask, std::size_t heads,
                            const AttentionWeights& weights) {
  if (x.rank() != 2) throw ShapeError("multi_head_attention: expected [n x d], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("multi_head_attention: dim " + std::to_string(d) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  if (mask.size() != n) throw ShapeError("multi_head_attention: mask length differs from sequence");
  const std::size_t dh = d / heads;

  std::vector<double> key_mask(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) key_mask[i * n + j] = mask[j] ? 1.0 : 0.0;
  const Tensor key_mask_t = Tensor::from_values({n, n}, key_mask, x.dtype());

  const Tensor q = weights.query(x);
  const Tensor k = weights.key(x);
  const Tensor v = weights.value(x);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    const Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    head_out.push_back(matmul(masked_softmax(scores, key_mask_t, -1), vh));
  }
  return weights.output(heads == 1 ? head_out[0] : concat_cols(head_out));
}

}  // namespace vslnet
