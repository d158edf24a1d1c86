#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vslnet/errors.hpp"

namespace vslnet {

// Extension ratio meaning "the whole video is foreground".
inline constexpr double kInfiniteExtension = std::numeric_limits<double>::infinity();

struct MomentAnnotation {
  std::string id;
  std::string video_id;
  double duration = 0.0;  // seconds
  double start = 0.0;     // seconds
  double end = 0.0;       // seconds
  std::string query;
  std::vector<std::string> tokens;  // lowercased whitespace tokens of `query`
  std::string split;                // "train", "val" or "test"
};

// Raw per-video features as stored on disk: rows x dim, row-major.
struct RawFeatures {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> values;
};

// Features resampled to the model length n with a prefix validity mask.
struct FeatureSequence {
  std::string video_id;
  std::size_t length = 0;        // n
  std::size_t dim = 0;           // d_v
  std::size_t valid_length = 0;  // number of leading rows with mask 1
  std::vector<double> values;    // n x d_v, masked rows are zero
  std::vector<std::uint8_t> mask;
};

// Inclusive index range [first, last].
struct SegmentRange {
  std::size_t first = 0;
  std::size_t last = 0;
  bool operator==(const SegmentRange&) const = default;
};

// ---- Time <-> index mapping ----

// Round(tau / duration * n), half away from zero, clamped to [0, n - 1].
std::size_t time_to_span(double tau, double duration, std::size_t n);
// index / n * duration.
double span_to_time(std::size_t index, double duration, std::size_t n);

// ---- Feature resampling ----

// Endpoint-inclusive index selection Round(i * (rows - 1) / (n - 1)) when the
// video is longer than n; copy and zero-pad otherwise.
FeatureSequence resample_features(const RawFeatures& raw, std::size_t n,
                                  std::string video_id = {});

// ---- Supervision targets ----

// Binary foreground sequence of length n. The span is extended by
// Round(ratio * (a_e - a_s)) indices on each side and clamped to the sequence.
std::vector<std::uint8_t> build_highlight_labels(std::size_t a_s, std::size_t a_e, std::size_t n,
                                                 double ratio);

std::vector<SegmentRange> split_segments(std::size_t n, std::size_t segment_length);

// 1 for every segment intersecting [a_s, a_e].
std::vector<std::uint8_t> build_nil_labels(std::size_t a_s, std::size_t a_e,
                                           const std::vector<SegmentRange>& segments);

// ---- Tokenization and embeddings ----

std::vector<std::string> tokenize(std::string_view text);

// Fixed word-embedding table. Row `size()` is the zero out-of-vocabulary row.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<std::string> tokens, std::size_t dim, std::vector<float> values);

  std::size_t size() const { return tokens_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t oov_row() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  // Row index for a token, or oov_row() when absent.
  std::size_t lookup(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  // Rows of the table including the trailing OOV row: (size() + 1) x dim.
  const std::vector<float>& values() const { return values_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t dim_ = 0;
  std::vector<float> values_;
};

// ---- File formats ----

inline constexpr std::uint32_t kFeatureMagic = 0x464C5356;  // "VSLF"
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::uint32_t kEmbeddingMagic = 0x454C5356;  // "VSLE"

// 16-byte header (magic, version, rows, dim as u32 LE) + rows x dim f32 LE.
RawFeatures read_feature_file(const std::filesystem::path& file);
void write_feature_file(const std::filesystem::path& file, const RawFeatures& features);

// Binary table: u32 magic, u32 vocab size, u32 dim, then vocab x dim f32 LE.
// Tokens live in a text file, one per line; line k names row k.
EmbeddingTable read_embeddings(const std::filesystem::path& table_file,
                               const std::filesystem::path& vocab_file);
void write_embeddings(const std::filesystem::path& table_file,
                      const std::filesystem::path& vocab_file,
                      const std::vector<std::string>& tokens, std::size_t dim,
                      const std::vector<float>& values);

std::vector<MomentAnnotation> read_manifest(const std::filesystem::path& file);
void write_manifest(const std::filesystem::path& file,
                    const std::vector<MomentAnnotation>& annotations);

// ---- Dataset ----

// Contents of dataset.json; relative paths resolve against the dataset root.
struct DatasetDescriptor {
  std::string annotations = "manifest.jsonl";
  std::string features = "features";
  std::string embeddings = "embeddings.bin";
  std::string vocab = "vocab.txt";
  std::size_t feature_dim = 0;
};

struct LoadReport {
  std::size_t annotations = 0;
  std::size_t videos = 0;
  std::size_t tokens = 0;
  std::size_t oov_tokens = 0;
};

struct Dataset {
  std::filesystem::path root;
  DatasetDescriptor descriptor;
  std::vector<MomentAnnotation> annotations;
  std::map<std::string, RawFeatures> features;
  EmbeddingTable embeddings;
  LoadReport report;

  std::vector<const MomentAnnotation*> split(std::string_view name) const;
  const RawFeatures& features_for(const std::string& video_id) const;
};

void write_dataset_descriptor(const std::filesystem::path& file, const DatasetDescriptor& d);

// Accepts a dataset directory (reads dataset.json) or the descriptor file itself.
Dataset load_dataset(const std::filesystem::path& path);

// ---- Model-ready samples ----

struct LabelConfig {
  std::size_t max_length = 128;  // n
  double extension_ratio = 0.1;  // alpha
  std::vector<std::size_t> scales;
};

// One annotation resolved to resampled features, embedded query and labels.
// Spans are mapped with the valid (unpadded) length so labels never fall on padding.
struct PreparedSample {
  std::string id;
  double duration = 0.0;
  FeatureSequence video;
  std::size_t query_length = 0;
  std::size_t query_dim = 0;
  std::vector<double> query;  // m x d_q
  std::size_t start_index = 0;
  std::size_t end_index = 0;
  std::vector<std::uint8_t> highlight;                 // length n
  std::vector<std::vector<std::uint8_t>> nil_labels;   // per scale, length K_i
};

PreparedSample prepare_sample(const Dataset& dataset, const MomentAnnotation& annotation,
                              const LabelConfig& config);

}  // namespace vslnet
