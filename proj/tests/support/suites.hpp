#pragma once

// Check suites shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "support/gradcheck.hpp"
#include "vslnet/network.hpp"

namespace vslnet::testing {

struct NamedCheck {
  std::string name;
  GradCheckResult result;
};

inline std::vector<NamedCheck> primitive_gradchecks() {
  std::mt19937_64 rng(11);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  auto c = random_tensor({3, 4}, rng), row = random_tensor({4}, rng);
  auto w = random_tensor({3}, rng), s = random_tensor({1}, rng);
  auto v = random_tensor({6}, rng);
  auto mask = Tensor::from_values({3, 4}, {1, 1, 0, 1, 0, 1, 1, 1, 1, 0, 0, 1});
  auto gain = random_tensor({4}, rng), bias = random_tensor({4}, rng);
  auto kern = random_tensor({3, 4, 2}, rng, 0.5), kb = random_tensor({2}, rng);
  auto tgt = Tensor::from_values({6}, {1, 0, 1, 1, 0, 0});
  auto vmask = Tensor::from_values({6}, {1, 1, 1, 1, 1, 0});
  auto pos = Tensor::from_values({4}, {0.3, 1.2, 0.7, 0.9});
  auto wi = random_tensor({4, 12}, rng, 0.5), wh = random_tensor({3, 12}, rng, 0.5);
  auto lb = random_tensor({12}, rng, 0.5);
  const std::vector<std::uint8_t> rows{1, 0, 1};

  struct Case {
    const char* name;
    std::function<Tensor()> f;
    std::vector<Tensor> leaves;
  };
  const std::vector<Case> cases = {
      {"matmul", [&] { return weighted_sum(matmul(a, b)); }, {a, b}},
      {"transpose", [&] { return weighted_sum(transpose(a)); }, {a}},
      {"add", [&] { return weighted_sum(add(a, c)); }, {a, c}},
      {"sub", [&] { return weighted_sum(sub(a, c)); }, {a, c}},
      {"mul", [&] { return weighted_sum(mul(a, c)); }, {a, c}},
      {"scale", [&] { return weighted_sum(scale(a, -1.7)); }, {a}},
      {"add_row_vector", [&] { return weighted_sum(add_row_vector(a, row)); }, {a, row}},
      {"scale_rows", [&] { return weighted_sum(scale_rows(a, w)); }, {a, w}},
      {"mul_scalar", [&] { return weighted_sum(mul_scalar(a, s)); }, {a, s}},
      {"repeat_rows", [&] { return weighted_sum(repeat_rows(row, 3)); }, {row}},
      {"relu", [&] { return weighted_sum(relu(a)); }, {a}},
      {"sigmoid", [&] { return weighted_sum(sigmoid(a)); }, {a}},
      {"tanh", [&] { return weighted_sum(tanh(a)); }, {a}},
      {"reshape", [&] { return weighted_sum(reshape(a, {2, 6})); }, {a}},
      {"slice_rows", [&] { return weighted_sum(slice_rows(a, 1, 3)); }, {a}},
      {"slice_cols", [&] { return weighted_sum(slice_cols(a, 1, 3)); }, {a}},
      {"concat_rows",
       [&] {
         const Tensor p[] = {a, c};
         return weighted_sum(concat_rows(p));
       },
       {a, c}},
      {"concat_cols",
       [&] {
         const Tensor p[] = {a, c};
         return weighted_sum(concat_cols(p));
       },
       {a, c}},
      {"sum", [&] { return scale(sum(a), 0.3); }, {a}},
      {"mean", [&] { return mean(mul(a, a)); }, {a}},
      {"element", [&] { return mul(element(a, 5), element(a, 7)); }, {a}},
      {"mask_rows", [&] { return weighted_sum(mask_rows(a, rows)); }, {a}},
      {"masked_softmax rows", [&] { return weighted_sum(masked_softmax(a, mask)); }, {a}},
      {"masked_softmax cols", [&] { return weighted_sum(masked_softmax(a, mask, 0)); }, {a}},
      {"masked_log_softmax", [&] { return weighted_sum(masked_log_softmax(a, mask)); }, {a}},
      {"layer_norm", [&] { return weighted_sum(layer_norm(a, gain, bias)); }, {a, gain, bias}},
      {"conv1d", [&] { return weighted_sum(conv1d(a, kern, kb)); }, {a, kern, kb}},
      {"dropout",
       [&] {
         std::mt19937_64 r(3);
         return weighted_sum(dropout(a, 0.4, r));
       },
       {a}},
      {"bce_with_logits", [&] { return bce_with_logits(v, tgt, vmask); }, {v}},
      {"normalize_by_max", [&] { return weighted_sum(normalize_by_max(pos)); }, {pos}},
      {"lstm_sequence", [&] { return weighted_sum(lstm_sequence(a, wi, wh, lb)); }, {a, wi, wh, lb}},
  };
  std::vector<NamedCheck> out;
  for (const auto& k : cases) out.push_back({k.name, gradcheck(k.f, k.leaves)});
  return out;
}

// Small 64-bit configuration exercising every block.
inline ModelConfig toy_config(Variant variant) {
  ModelConfig c;
  c.variant = variant;
  c.dim = 8;
  c.heads = 2;
  c.kernel_width = 3;
  c.conv_layers = 2;
  c.video_dim = 5;
  c.query_dim = 4;
  c.max_length = 8;
  if (variant == Variant::kNetL) c.scales = {4, 8};
  c.dtype = DType::kFloat64;
  c.init_seed = 3;
  return c;
}

inline std::vector<Tensor> params_under(Model& model, const std::string& prefix) {
  std::vector<Tensor> out;
  for (auto& [path, t] : model.params().entries()) {
    if (path.rfind(prefix, 0) == 0) out.push_back(t);
  }
  return out;
}

// Randomizes every parameter so that zero-initialized biases and unit norm
// gains do not hide errors.
inline void perturb_params(Model& model, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  for (auto& [path, t] : model.params().entries()) {
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, t.at(i) + g(rng));
  }
}

inline ModelInput toy_input(const ModelConfig& c, std::size_t valid, std::size_t m,
                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelInput in;
  std::vector<double> video(c.max_length * c.video_dim, 0.0);
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t i = 0; i < valid * c.video_dim; ++i) video[i] = g(rng);
  in.video = Tensor::from_values({c.max_length, c.video_dim}, video, c.dtype);
  in.video_mask.assign(c.max_length, 0);
  std::fill(in.video_mask.begin(), in.video_mask.begin() + valid, 1);
  in.query = random_tensor({m, c.query_dim}, rng, 1.0, c.dtype);
  return in;
}

inline std::vector<NamedCheck> block_gradchecks() {
  std::vector<NamedCheck> out;
  const ForwardContext ctx;
  std::mt19937_64 rng(17);
  const std::size_t per_leaf = 12;

  Model model(toy_config(Variant::kNetL));
  perturb_params(model, 4);
  const std::vector<std::uint8_t> mask{1, 1, 1, 1, 1, 0};
  auto leaves = [&](const std::string& prefix, std::vector<Tensor> inputs) {
    for (auto& t : params_under(model, prefix)) inputs.push_back(t);
    return inputs;
  };

  {
    auto x = random_tensor({6, 8}, rng);
    out.push_back({"encoder", gradcheck([&] { return weighted_sum(model.encoder(x, mask, ctx)); },
                                        leaves("encoder/", {x}), 1e-5, per_leaf)});
  }
  {
    auto v = random_tensor({6, 8}, rng), q = random_tensor({3, 8}, rng);
    out.push_back({"context-query attention",
                   gradcheck([&] { return weighted_sum(model.cqa(v, mask, q, ctx)); },
                             leaves("cqa/", {v, q}), 1e-5, per_leaf)});
  }
  {
    auto h = random_tensor({5, 16}, rng);
    out.push_back({"span predictor", gradcheck(
                                         [&] {
                                           auto l = model.predictor(h);
                                           return add(weighted_sum(l.start, 1),
                                                      weighted_sum(l.end, 2));
                                         },
                                         leaves("predictor/", {h}), 1e-5, per_leaf)});
  }
  {
    auto v = random_tensor({6, 8}, rng), q = random_tensor({3, 8}, rng);
    out.push_back({"query-guided highlighting",
                   gradcheck(
                       [&] {
                         auto r = (*model.highlight)(v, mask, q);
                         return add(weighted_sum(r.features, 1), weighted_sum(r.logits, 2));
                       },
                       leaves("highlight/", {v, q}), 1e-5, per_leaf)});
  }
  {
    auto c = random_tensor({4, 8}, rng);
    const std::vector<std::uint8_t> seg_mask{1, 1, 1, 0};
    out.push_back({"nil prediction", gradcheck(
                                         [&] {
                                           auto r = (*model.nil)(c, seg_mask, ctx);
                                           return add(weighted_sum(r.encoded, 1),
                                                      scale(r.logit, 3.0));
                                         },
                                         leaves("nil/", {c}), 1e-5, per_leaf)});
  }
  {
    auto in = toy_input(model.config(), 6, 3, 21);
    auto all = leaves("", {in.video, in.query});
    out.push_back({"vslnet-l forward", gradcheck(
                                           [&] {
                                             auto o = model.forward(in, ctx);
                                             Tensor total = Tensor::scalar(0.0);
                                             for (const auto& s : o.scales) {
                                               total = add(total, weighted_sum(s.start_logits, 1));
                                               total = add(total, weighted_sum(s.end_logits, 2));
                                               total = add(total, weighted_sum(s.nil_logits, 3));
                                             }
                                             return total;
                                           },
                                           all, 1e-5, 3)});
  }
  return out;
}

// Largest elementwise gap between VSLNet with the highlight scorer saturated
// (S_h -> 1 through a large bias) and the same network with the highlighting
// step replaced by plain concatenation of the pooled sentence vector.
inline double saturated_highlight_gap(std::uint64_t seed, double bias = 60.0) {
  auto cfg = toy_config(Variant::kNet);
  cfg.init_seed = seed;
  Model model(cfg);
  model.highlight->scorer_bias.set(0, bias);
  const auto in = toy_input(cfg, 6, 3, seed + 100);
  const ForwardContext ctx;
  NoGradGuard no_grad;
  const auto out = model.forward(in, ctx);

  const Tensor query = model.encode_query(in.query, ctx);
  const Tensor features = model.cqa(model.encode_video(in.video, in.video_mask, ctx),
                                    in.video_mask, query, ctx);
  const Tensor parts[] = {features, repeat_rows(model.highlight->pool(query), cfg.max_length)};
  const auto ref = model.predictor(mask_rows(concat_cols(parts), in.video_mask));

  double gap = 0.0;
  const auto s = out.scales[0].start_logits.values(), e = out.scales[0].end_logits.values();
  const auto rs = ref.start.values(), re = ref.end.values();
  for (std::size_t i = 0; i < s.size(); ++i) {
    gap = std::max({gap, std::abs(s[i] - rs[i]), std::abs(e[i] - re[i])});
  }
  return gap;
}

// With every nil score equal, the re-weighted concatenation must reassemble
// the per-segment features bit for bit, in their original order.
inline bool split_concat_identity(std::uint64_t seed) {
  auto cfg = toy_config(Variant::kNetL);
  cfg.init_seed = seed;
  Model model(cfg);
  for (std::size_t i = 0; i < model.nil->ffn.weight.numel(); ++i) model.nil->ffn.weight.set(i, 0.0);
  const auto in = toy_input(cfg, 7, 2, seed + 100);
  NoGradGuard no_grad;
  const auto out = model.forward(in, ForwardContext{});
  for (const auto& s : out.scales) {
    for (double w : s.normalized_nil.values()) {
      if (w != 1.0) return false;
    }
    const auto joined = s.concatenated.values();
    std::vector<double> expected;
    for (const auto& seg : s.segment_features) {
      const auto v = seg.values();
      expected.insert(expected.end(), v.begin(), v.end());
    }
    if (joined != expected) return false;
  }
  return true;
}

}  // namespace vslnet::testing
