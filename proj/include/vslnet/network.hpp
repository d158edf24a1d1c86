#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vslnet/data.hpp"
#include "vslnet/layers.hpp"

namespace vslnet {

enum class Variant { kBase, kNet, kNetL };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct ModelConfig {
  Variant variant = Variant::kNet;
  std::size_t dim = 128;
  std::size_t heads = 8;
  std::size_t kernel_width = 7;
  std::size_t conv_layers = 4;
  std::size_t video_dim = 1024;
  std::size_t query_dim = 300;
  std::size_t max_length = 128;
  double extension_ratio = 0.1;
  std::vector<std::size_t> scales;  // segment lengths l_i (VSLNet-L only)
  bool positional_encoding = true;
  DType dtype = DType::kFloat32;
  std::uint64_t init_seed = 1;

  void validate() const;
  LabelConfig labels() const { return {max_length, extension_ratio, scales}; }
};

// Training-time switches threaded through a forward pass.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  Tensor maybe_dropout(const Tensor& x) const;
};

// Sinusoidal position table [n x d].
Tensor positional_encoding(std::size_t n, std::size_t d, DType dtype);

// Shared encoder block: conv stack, self-attention and feed-forward, each a
// pre-norm residual sublayer. Rows with mask 0 stay zero.
class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  FeatureEncoder(ParamStore& store, const std::string& path, const ModelConfig& config,
                 std::mt19937_64& rng);

  Tensor operator()(const Tensor& x, std::span<const std::uint8_t> mask,
                    const ForwardContext& ctx) const;

  struct ConvLayer {
    Tensor norm_gain, norm_bias, kernel, bias;
  };
  std::vector<ConvLayer> convs;
  Tensor attention_norm_gain, attention_norm_bias;
  AttentionWeights attention;
  Tensor ffn_norm_gain, ffn_norm_bias;
  Linear ffn;
  std::size_t heads = 1;
  bool use_positions = true;
};

// Bidirectional context/query attention with a trilinear similarity.
class ContextQueryAttention {
 public:
  ContextQueryAttention() = default;
  ContextQueryAttention(ParamStore& store, const std::string& path, std::size_t dim,
                        std::mt19937_64& rng);

  struct Result {
    Tensor similarity;        // n x m
    Tensor row_attention;     // n x m, softmax over query positions
    Tensor column_attention;  // n x m, softmax over video positions
    Tensor context_to_query;  // n x d
    Tensor query_to_context;  // n x d
    Tensor output;            // n x d
  };

  Result attend(const Tensor& video, std::span<const std::uint8_t> video_mask, const Tensor& query,
                const ForwardContext& ctx) const;
  Tensor operator()(const Tensor& video, std::span<const std::uint8_t> video_mask,
                    const Tensor& query, const ForwardContext& ctx) const {
    return attend(video, video_mask, query, ctx).output;
  }

  Tensor w_video, w_query, w_product;  // [d x 1] each
  Linear output;                       // 4d -> d
};

// Start LSTM over the features, end LSTM stacked on the start hidden states,
// and one affine scorer per boundary over [hidden; feature].
class SpanPredictor {
 public:
  SpanPredictor() = default;
  SpanPredictor(ParamStore& store, const std::string& path, std::size_t input_dim,
                std::size_t hidden, std::mt19937_64& rng);

  struct Logits {
    Tensor start;  // [n]
    Tensor end;    // [n]
  };
  Logits operator()(const Tensor& features) const;

  LstmWeights start_lstm, end_lstm;
  Linear start_head, end_head;
};

class QueryGuidedHighlight {
 public:
  QueryGuidedHighlight() = default;
  QueryGuidedHighlight(ParamStore& store, const std::string& path, std::size_t dim,
                       std::mt19937_64& rng);

  struct Result {
    Tensor sentence;  // [1 x d], attention-pooled query
    Tensor logits;    // [n], pre-sigmoid highlight scores
    Tensor scores;    // [n], S_h
    Tensor features;  // [n x 2d], S_h-weighted [feature; sentence]
  };

  // Additive attention pooling of the encoded query into one sentence vector.
  Tensor pool(const Tensor& query) const;
  Result operator()(const Tensor& features, std::span<const std::uint8_t> mask,
                    const Tensor& query) const;

  Linear pool_hidden;  // d -> d
  Tensor pool_score;   // [d x 1]
  Tensor scorer_kernel, scorer_bias;  // width-1 conv, 2d -> 1
};

class NilPredictor {
 public:
  NilPredictor() = default;
  NilPredictor(ParamStore& store, const std::string& path, const ModelConfig& config,
               std::mt19937_64& rng);

  struct Result {
    Tensor encoded;    // [l x d]
    Tensor attention;  // [l]
    Tensor logit;      // [1], sigmoid gives the nil score
  };
  Result operator()(const Tensor& segment, std::span<const std::uint8_t> mask,
                    const ForwardContext& ctx) const;

  FeatureEncoder encoder;
  Tensor score_kernel, score_bias;  // width-1 conv, d -> 1
  Linear ffn;                        // d -> 1
};

struct ModelInput {
  Tensor video;                          // [n x d_v]
  std::vector<std::uint8_t> video_mask;  // [n]
  Tensor query;                          // [m x d_q]
};

ModelInput make_input(const PreparedSample& sample, DType dtype);

// Outputs for one split scale (VSLBase/VSLNet produce a single entry).
struct ScaleOutput {
  std::size_t segment_length = 0;  // 0 when the video is not split
  Tensor start_logits;             // [n]
  Tensor end_logits;               // [n]
  Tensor highlight_logits;         // [n], VSLNet / VSLNet-L
  Tensor nil_logits;               // [K], VSLNet-L
  Tensor normalized_nil;           // [K], S_nil / max(S_nil)
  std::vector<Tensor> segment_features;  // encoded segments, VSLNet-L
  Tensor concatenated;                   // reweighted concat [n x d], VSLNet-L
};

struct ForwardOutput {
  std::vector<std::uint8_t> mask;
  std::vector<ScaleOutput> scales;

  std::vector<double> start_probs(std::size_t scale = 0) const;
  std::vector<double> end_probs(std::size_t scale = 0) const;
  // Boundary scores with -inf on masked positions.
  std::vector<double> start_scores(std::size_t scale = 0) const;
  std::vector<double> end_scores(std::size_t scale = 0) const;
  std::vector<double> highlight_scores(std::size_t scale = 0) const;
  std::vector<double> nil_scores(std::size_t scale = 0) const;
};

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  ForwardOutput forward(const ModelInput& input, const ForwardContext& ctx) const;

  Tensor encode_video(const Tensor& video, std::span<const std::uint8_t> mask,
                      const ForwardContext& ctx) const;
  Tensor encode_query(const Tensor& query, const ForwardContext& ctx) const;

  // Width of the features the span predictor consumes.
  std::size_t predictor_input_dim() const;

  Linear video_projection, query_projection;
  FeatureEncoder encoder;
  ContextQueryAttention cqa;
  std::optional<QueryGuidedHighlight> highlight;
  std::optional<NilPredictor> nil;
  SpanPredictor predictor;

 private:
  ScaleOutput forward_split(const ModelInput& input, const Tensor& query,
                            std::size_t segment_length, const ForwardContext& ctx) const;

  ModelConfig config_;
  ParamStore params_;
};

// Softmax over positions with mask 1; zeros elsewhere.
std::vector<double> masked_probabilities(const Tensor& logits, std::span<const std::uint8_t> mask);

}  // namespace vslnet
