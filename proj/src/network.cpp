#include "vslnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vslnet {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kBase:
      return "vslbase";
    case Variant::kNet:
      return "vslnet";
    case Variant::kNetL:
      return "vslnet-l";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "vslbase" || s == "base") return Variant::kBase;
  if (s == "vslnet" || s == "net") return Variant::kNet;
  if (s == "vslnet-l" || s == "vslnetl" || s == "vslnet_l") return Variant::kNetL;
  throw ConfigError("unknown model variant '" + std::string(name) +
                    "' (expected vslbase, vslnet or vslnet-l)");
}

void ModelConfig::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("hidden dim " + std::to_string(dim) + " must be divisible by heads " +
                      std::to_string(heads));
  }
  if (kernel_width % 2 == 0) {
    throw ConfigError("conv kernel width must be odd, got " + std::to_string(kernel_width));
  }
  if (video_dim == 0 || query_dim == 0 || max_length == 0) {
    throw ConfigError("video_dim, query_dim and max_length must be positive");
  }
  if (std::isnan(extension_ratio) || extension_ratio < 0.0) {
    throw ConfigError("extension ratio must be >= 0 or inf");
  }
  if (variant == Variant::kNetL) {
    if (scales.empty()) throw ConfigError("vslnet-l needs at least one segment scale");
    for (auto l : scales) split_segments(max_length, l);
  } else if (!scales.empty()) {
    throw ConfigError("segment scales are only valid for vslnet-l, not " +
                      std::string(variant_name(variant)));
  }
}

Tensor ForwardContext::maybe_dropout(const Tensor& x) const {
  if (!training || dropout <= 0.0) return x;
  if (!rng) throw ContractError("training forward pass needs an RNG for dropout");
  return vslnet::dropout(x, dropout, *rng);
}

Tensor positional_encoding(std::size_t n, std::size_t d, DType dtype) {
  std::vector<double> pe(n * d);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * rate;
      pe[pos * d + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from_values({n, d}, pe, dtype);
}

namespace {

Tensor ones(std::size_t n, DType dtype) { return Tensor::full({n}, 1.0, dtype); }

std::vector<std::uint8_t> all_valid(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

Tensor conv_kernel(ParamStore& store, const std::string& path, std::size_t width, std::size_t in,
                   std::size_t out, std::mt19937_64& rng) {
  return store.add(path, xavier_uniform({width, in, out}, width * in, width * out, rng,
                                        store.dtype()));
}

// Outer broadcast of a row mask (rows) or column mask (cols) to [rows x cols].
Tensor broadcast_mask(std::span<const std::uint8_t> row_mask, std::span<const std::uint8_t> col_mask,
                      DType dtype) {
  const std::size_t r = row_mask.size(), c = col_mask.size();
  std::vector<double> m(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i * c + j] = (row_mask[i] && col_mask[j]) ? 1.0 : 0.0;
  return Tensor::from_values({r, c}, m, dtype);
}

}  // namespace

FeatureEncoder::FeatureEncoder(ParamStore& store, const std::string& path,
                               const ModelConfig& config, std::mt19937_64& rng)
    : heads(config.heads), use_positions(config.positional_encoding) {
  const std::size_t d = config.dim;
  const DType dt = store.dtype();
  for (std::size_t i = 0; i < config.conv_layers; ++i) {
    const std::string p = path + "/conv" + std::to_string(i);
    ConvLayer layer;
    layer.norm_gain = store.add(p + "/norm_gain", Tensor::full({d}, 1.0, dt));
    layer.norm_bias = store.add(p + "/norm_bias", Tensor::zeros({d}, dt));
    layer.kernel = conv_kernel(store, p + "/kernel", config.kernel_width, d, d, rng);
    layer.bias = store.add(p + "/bias", Tensor::zeros({d}, dt));
    convs.push_back(std::move(layer));
  }
  attention_norm_gain = store.add(path + "/attention/norm_gain", Tensor::full({d}, 1.0, dt));
  attention_norm_bias = store.add(path + "/attention/norm_bias", Tensor::zeros({d}, dt));
  attention = AttentionWeights::create(store, path + "/attention", d, rng);
  ffn_norm_gain = store.add(path + "/ffn/norm_gain", Tensor::full({d}, 1.0, dt));
  ffn_norm_bias = store.add(path + "/ffn/norm_bias", Tensor::zeros({d}, dt));
  ffn = Linear::create(store, path + "/ffn", d, d, rng);
}

Tensor FeatureEncoder::operator()(const Tensor& input, std::span<const std::uint8_t> mask,
                                  const ForwardContext& ctx) const {
  Tensor x = input;
  if (use_positions) x = add(x, positional_encoding(x.dim(0), x.dim(1), x.dtype()));
  x = mask_rows(x, mask);
  for (const auto& conv : convs) {
    Tensor y = layer_norm(x, conv.norm_gain, conv.norm_bias);
    y = ctx.maybe_dropout(relu(conv1d(y, conv.kernel, conv.bias)));
    x = mask_rows(add(x, y), mask);
  }
  {
    Tensor y = layer_norm(x, attention_norm_gain, attention_norm_bias);
    y = ctx.maybe_dropout(multi_head_attention(y, mask, heads, attention));
    x = mask_rows(add(x, y), mask);
  }
  Tensor y = ffn(layer_norm(x, ffn_norm_gain, ffn_norm_bias));
  return mask_rows(add(x, y), mask);
}

ContextQueryAttention::ContextQueryAttention(ParamStore& store, const std::string& path,
                                             std::size_t dim, std::mt19937_64& rng) {
  w_video = store.add(path + "/w_video", xavier_uniform({dim, 1}, 3 * dim, 1, rng, store.dtype()));
  w_query = store.add(path + "/w_query", xavier_uniform({dim, 1}, 3 * dim, 1, rng, store.dtype()));
  w_product =
      store.add(path + "/w_product", xavier_uniform({dim, 1}, 3 * dim, 1, rng, store.dtype()));
  output = Linear::create(store, path + "/output", 4 * dim, dim, rng);
}

ContextQueryAttention::Result ContextQueryAttention::attend(const Tensor& video,
                                                            std::span<const std::uint8_t> video_mask,
                                                            const Tensor& query,
                                                            const ForwardContext& ctx) const {
  const std::size_t n = video.dim(0), m = query.dim(0);
  if (video.dim(1) != query.dim(1)) {
    throw ShapeError("context_query_attention: video " + shape_str(video.shape()) + " vs query " +
                     shape_str(query.shape()));
  }
  const DType dt = video.dtype();
  const Tensor ones_m = Tensor::full({1, m}, 1.0, dt);
  const Tensor ones_n = Tensor::full({n, 1}, 1.0, dt);
  // S_ij = w_v . v_i + w_q . q_j + w_p . (v_i * q_j)
  const Tensor video_term = matmul(matmul(video, w_video), ones_m);
  const Tensor query_term = matmul(ones_n, transpose(matmul(query, w_query)));
  const Tensor product_term =
      matmul(mul(video, repeat_rows(reshape(w_product, {w_product.numel()}), n)), transpose(query));

  Result r;
  r.similarity = add(add(video_term, query_term), product_term);
  const auto query_valid = all_valid(m);
  r.row_attention = masked_softmax(r.similarity, broadcast_mask(all_valid(n), query_valid, dt), 1);
  r.column_attention = masked_softmax(r.similarity, broadcast_mask(video_mask, query_valid, dt), 0);
  r.context_to_query = matmul(r.row_attention, query);
  r.query_to_context = matmul(matmul(r.row_attention, transpose(r.column_attention)), video);
  const Tensor parts[] = {video, r.context_to_query, mul(video, r.context_to_query),
                          mul(video, r.query_to_context)};
  r.output = mask_rows(ctx.maybe_dropout(output(concat_cols(parts))), video_mask);
  return r;
}

SpanPredictor::SpanPredictor(ParamStore& store, const std::string& path, std::size_t input_dim,
                             std::size_t hidden, std::mt19937_64& rng) {
  start_lstm = LstmWeights::create(store, path + "/start_lstm", input_dim, hidden, rng);
  end_lstm = LstmWeights::create(store, path + "/end_lstm", hidden, hidden, rng);
  start_head = Linear::create(store, path + "/start_head", hidden + input_dim, 1, rng);
  end_head = Linear::create(store, path + "/end_head", hidden + input_dim, 1, rng);
}

SpanPredictor::Logits SpanPredictor::operator()(const Tensor& features) const {
  const std::size_t n = features.dim(0);
  const Tensor h_start =
      lstm_sequence(features, start_lstm.w_input, start_lstm.w_hidden, start_lstm.bias);
  const Tensor h_end = lstm_sequence(h_start, end_lstm.w_input, end_lstm.w_hidden, end_lstm.bias);
  const Tensor start_in[] = {h_start, features};
  const Tensor end_in[] = {h_end, features};
  return {reshape(start_head(concat_cols(start_in)), {n}),
          reshape(end_head(concat_cols(end_in)), {n})};
}

QueryGuidedHighlight::QueryGuidedHighlight(ParamStore& store, const std::string& path,
                                           std::size_t dim, std::mt19937_64& rng) {
  pool_hidden = Linear::create(store, path + "/pool_hidden", dim, dim, rng);
  pool_score = store.add(path + "/pool_score", xavier_uniform({dim, 1}, dim, 1, rng, store.dtype()));
  scorer_kernel = conv_kernel(store, path + "/scorer_kernel", 1, 2 * dim, 1, rng);
  scorer_bias = store.add(path + "/scorer_bias", Tensor::zeros({1}, store.dtype()));
}

Tensor QueryGuidedHighlight::pool(const Tensor& query) const {
  const std::size_t m = query.dim(0);
  const Tensor scores = reshape(matmul(tanh(pool_hidden(query)), pool_score), {m});
  const Tensor weights = masked_softmax(scores, ones(m, query.dtype()));
  return matmul(reshape(weights, {1, m}), query);
}

QueryGuidedHighlight::Result QueryGuidedHighlight::operator()(const Tensor& features,
                                                              std::span<const std::uint8_t> mask,
                                                              const Tensor& query) const {
  const std::size_t n = features.dim(0);
  Result r;
  r.sentence = pool(query);
  const Tensor parts[] = {features, repeat_rows(r.sentence, n)};
  const Tensor joined = concat_cols(parts);
  r.logits = reshape(conv1d(joined, scorer_kernel, scorer_bias), {n});
  r.scores = sigmoid(r.logits);
  r.features = mask_rows(scale_rows(joined, r.scores), mask);
  return r;
}

NilPredictor::NilPredictor(ParamStore& store, const std::string& path, const ModelConfig& config,
                           std::mt19937_64& rng)
    : encoder(store, path + "/encoder", config, rng) {
  score_kernel = conv_kernel(store, path + "/score_kernel", 1, config.dim, 1, rng);
  score_bias = store.add(path + "/score_bias", Tensor::zeros({1}, store.dtype()));
  ffn = Linear::create(store, path + "/ffn", config.dim, 1, rng);
}

NilPredictor::Result NilPredictor::operator()(const Tensor& segment,
                                              std::span<const std::uint8_t> mask,
                                              const ForwardContext& ctx) const {
  const std::size_t l = segment.dim(0);
  Result r;
  r.encoded = encoder(segment, mask, ctx);
  const Tensor scores = reshape(conv1d(r.encoded, score_kernel, score_bias), {l});
  r.attention = masked_softmax(scores, mask_tensor(mask, segment.dtype()));
  const Tensor pooled = matmul(reshape(r.attention, {1, l}), r.encoded);
  r.logit = reshape(ffn(pooled), {1});
  return r;
}

ModelInput make_input(const PreparedSample& sample, DType dtype) {
  ModelInput in;
  in.video = Tensor::from_values({sample.video.length, sample.video.dim}, sample.video.values, dtype);
  in.video_mask = sample.video.mask;
  in.query = Tensor::from_values({sample.query_length, sample.query_dim}, sample.query, dtype);
  return in;
}

Model::Model(ModelConfig config) : config_(std::move(config)), params_(config_.dtype) {
  config_.validate();
  std::mt19937_64 rng(config_.init_seed);
  const std::size_t d = config_.dim;
  video_projection = Linear::create(params_, "video_projection", config_.video_dim, d, rng);
  query_projection = Linear::create(params_, "query_projection", config_.query_dim, d, rng);
  encoder = FeatureEncoder(params_, "encoder", config_, rng);
  cqa = ContextQueryAttention(params_, "cqa", d, rng);
  if (config_.variant != Variant::kBase) highlight.emplace(params_, "highlight", d, rng);
  if (config_.variant == Variant::kNetL) nil.emplace(params_, "nil", config_, rng);
  predictor = SpanPredictor(params_, "predictor", predictor_input_dim(), d, rng);
}

std::size_t Model::predictor_input_dim() const {
  return config_.variant == Variant::kBase ? config_.dim : 2 * config_.dim;
}

Tensor Model::encode_video(const Tensor& video, std::span<const std::uint8_t> mask,
                           const ForwardContext& ctx) const {
  return encoder(video_projection(video), mask, ctx);
}

Tensor Model::encode_query(const Tensor& query, const ForwardContext& ctx) const {
  return encoder(query_projection(query), all_valid(query.dim(0)), ctx);
}

ForwardOutput Model::forward(const ModelInput& input, const ForwardContext& ctx) const {
  const std::size_t n = config_.max_length;
  if (input.video.rank() != 2 || input.video.dim(0) != n || input.video.dim(1) != config_.video_dim) {
    throw ShapeError("model expects video features [" + std::to_string(n) + " x " +
                     std::to_string(config_.video_dim) + "], got " +
                     shape_str(input.video.shape()));
  }
  if (input.query.rank() != 2 || input.query.dim(1) != config_.query_dim) {
    throw ShapeError("model expects query embeddings [m x " + std::to_string(config_.query_dim) +
                     "], got " + shape_str(input.query.shape()));
  }
  if (input.video_mask.size() != n) throw ShapeError("video mask length differs from max_length");

  ForwardOutput out;
  out.mask = input.video_mask;
  const Tensor query = encode_query(input.query, ctx);

  if (config_.variant == Variant::kNetL) {
    for (std::size_t l : config_.scales) {
      out.scales.push_back(forward_split(input, query, l, ctx));
    }
    return out;
  }

  ScaleOutput s;
  const Tensor video = encode_video(input.video, input.video_mask, ctx);
  Tensor features = cqa(video, input.video_mask, query, ctx);
  if (highlight) {
    auto h = (*highlight)(features, input.video_mask, query);
    s.highlight_logits = h.logits;
    features = h.features;
  }
  auto logits = predictor(features);
  s.start_logits = logits.start;
  s.end_logits = logits.end;
  out.scales.push_back(std::move(s));
  return out;
}

ScaleOutput Model::forward_split(const ModelInput& input, const Tensor& query,
                                 std::size_t segment_length, const ForwardContext& ctx) const {
  const std::size_t d = config_.dim;
  const auto segments = split_segments(config_.max_length, segment_length);
  ScaleOutput s;
  s.segment_length = segment_length;
  std::vector<Tensor> nil_logits;
  for (const auto& seg : segments) {
    const std::span<const std::uint8_t> seg_mask(input.video_mask.data() + seg.first,
                                                 segment_length);
    const bool any_valid = std::any_of(seg_mask.begin(), seg_mask.end(), [](auto v) { return v; });
    Tensor attended;
    std::vector<std::uint8_t> npm_mask(seg_mask.begin(), seg_mask.end());
    if (any_valid) {
      const Tensor raw = slice_rows(input.video, seg.first, seg.last + 1);
      attended = cqa(encode_video(raw, seg_mask, ctx), seg_mask, query, ctx);
    } else {
      // Pure padding: no content to attend over, score it from zeros.
      attended = Tensor::zeros({segment_length, d}, input.video.dtype());
      npm_mask.assign(segment_length, 1);
    }
    auto npm = (*nil)(attended, npm_mask, ctx);
    s.segment_features.push_back(mask_rows(npm.encoded, seg_mask));
    nil_logits.push_back(npm.logit);
  }
  std::vector<Tensor> logit_rows;
  for (const auto& t : nil_logits) logit_rows.push_back(reshape(t, {1, 1}));
  s.nil_logits = reshape(concat_rows(logit_rows), {segments.size()});
  s.normalized_nil = normalize_by_max(sigmoid(s.nil_logits));

  std::vector<Tensor> weighted;
  for (std::size_t k = 0; k < segments.size(); ++k) {
    weighted.push_back(mul_scalar(s.segment_features[k], element(s.normalized_nil, k)));
  }
  s.concatenated = concat_rows(weighted);

  auto h = (*highlight)(s.concatenated, input.video_mask, query);
  s.highlight_logits = h.logits;
  auto logits = predictor(h.features);
  s.start_logits = logits.start;
  s.end_logits = logits.end;
  return s;
}

std::vector<double> masked_probabilities(const Tensor& logits, std::span<const std::uint8_t> mask) {
  const auto v = logits.values();
  std::vector<double> p(v.size(), 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (mask[i]) mx = std::max(mx, v[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (mask[i]) {
      p[i] = std::exp(v[i] - mx);
      z += p[i];
    }
  }
  for (auto& e : p) e /= z;
  return p;
}

namespace {

std::vector<double> scores_with_mask(const Tensor& logits, std::span<const std::uint8_t> mask) {
  auto v = logits.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!mask[i]) v[i] = -std::numeric_limits<double>::infinity();
  }
  return v;
}

std::vector<double> sigmoid_values(const Tensor& logits) {
  auto v = logits.values();
  for (auto& e : v) e = 1.0 / (1.0 + std::exp(-e));
  return v;
}

}  // namespace

std::vector<double> ForwardOutput::start_probs(std::size_t scale) const {
  return masked_probabilities(scales.at(scale).start_logits, mask);
}

std::vector<double> ForwardOutput::end_probs(std::size_t scale) const {
  return masked_probabilities(scales.at(scale).end_logits, mask);
}

std::vector<double> ForwardOutput::start_scores(std::size_t scale) const {
  return scores_with_mask(scales.at(scale).start_logits, mask);
}

std::vector<double> ForwardOutput::end_scores(std::size_t scale) const {
  return scores_with_mask(scales.at(scale).end_logits, mask);
}

std::vector<double> ForwardOutput::highlight_scores(std::size_t scale) const {
  const auto& t = scales.at(scale).highlight_logits;
  if (!t.defined()) throw ContractError("this model variant has no highlight scores");
  return sigmoid_values(t);
}

std::vector<double> ForwardOutput::nil_scores(std::size_t scale) const {
  const auto& t = scales.at(scale).nil_logits;
  if (!t.defined()) throw ContractError("this model variant has no nil scores");
  return sigmoid_values(t);
}

}  // namespace vslnet
