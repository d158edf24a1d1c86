#include "vslnet/data.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace vslnet {

static_assert(std::endian::native == std::endian::little,
              "feature IO assumes a little-endian host");

namespace fs = std::filesystem;

std::size_t time_to_span(double tau, double duration, std::size_t n) {
  if (n == 0) throw ConfigError("time_to_span: n must be at least 1");
  if (!(duration > 0.0)) throw DataError("time_to_span: duration must be positive");
  if (!(tau >= 0.0 && tau <= duration)) {
    throw DataError("time_to_span: time " + std::to_string(tau) + " outside [0, " +
                    std::to_string(duration) + "]");
  }
  const double scaled = std::round(tau / duration * static_cast<double>(n));
  return std::min(static_cast<std::size_t>(scaled), n - 1);
}

double span_to_time(std::size_t index, double duration, std::size_t n) {
  if (n == 0) throw ConfigError("span_to_time: n must be at least 1");
  return static_cast<double>(index) / static_cast<double>(n) * duration;
}

FeatureSequence resample_features(const RawFeatures& raw, std::size_t n, std::string video_id) {
  if (raw.rows == 0) throw DataError("resample_features: video '" + video_id + "' has no rows");
  if (n == 0) throw ConfigError("resample_features: n must be at least 1");
  FeatureSequence out;
  out.video_id = std::move(video_id);
  out.length = n;
  out.dim = raw.dim;
  out.values.assign(n * raw.dim, 0.0);
  out.mask.assign(n, 0);
  auto copy_row = [&](std::size_t dst, std::size_t src) {
    for (std::size_t j = 0; j < raw.dim; ++j) {
      out.values[dst * raw.dim + j] = raw.values[src * raw.dim + j];
    }
    out.mask[dst] = 1;
  };
  if (raw.rows > n) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t src =
          n == 1 ? 0
                 : static_cast<std::size_t>(std::round(static_cast<double>(i) *
                                                       static_cast<double>(raw.rows - 1) /
                                                       static_cast<double>(n - 1)));
      copy_row(i, src);
    }
    out.valid_length = n;
  } else {
    for (std::size_t i = 0; i < raw.rows; ++i) copy_row(i, i);
    out.valid_length = raw.rows;
  }
  return out;
}

std::vector<std::uint8_t> build_highlight_labels(std::size_t a_s, std::size_t a_e, std::size_t n,
                                                 double ratio) {
  if (!(a_s <= a_e && a_e < n)) {
    throw ContractError("build_highlight_labels: need 0 <= a_s <= a_e < n");
  }
  if (std::isnan(ratio) || ratio < 0.0) {
    throw ConfigError("extension ratio must be >= 0 or infinite");
  }
  if (std::isinf(ratio)) return std::vector<std::uint8_t>(n, 1);
  const double ext = std::round(ratio * static_cast<double>(a_e - a_s));
  const std::size_t e = ext >= static_cast<double>(n) ? n : static_cast<std::size_t>(ext);
  const std::size_t first = a_s >= e ? a_s - e : 0;
  const std::size_t last = std::min(n - 1, a_e + e);
  std::vector<std::uint8_t> labels(n, 0);
  for (std::size_t i = first; i <= last; ++i) labels[i] = 1;
  return labels;
}

std::vector<SegmentRange> split_segments(std::size_t n, std::size_t segment_length) {
  if (segment_length == 0 || n % segment_length != 0) {
    std::ostringstream os;
    os << "segment length " << segment_length << " does not divide n=" << n
       << "; valid lengths:";
    for (std::size_t l = 1; l <= n; ++l) {
      if (n % l == 0) os << ' ' << l;
    }
    throw ConfigError(os.str());
  }
  std::vector<SegmentRange> segments;
  for (std::size_t k = 0; k < n / segment_length; ++k) {
    segments.push_back({k * segment_length, (k + 1) * segment_length - 1});
  }
  return segments;
}

std::vector<std::uint8_t> build_nil_labels(std::size_t a_s, std::size_t a_e,
                                           const std::vector<SegmentRange>& segments) {
  if (a_s > a_e) throw ContractError("build_nil_labels: a_s > a_e");
  std::vector<std::uint8_t> labels;
  labels.reserve(segments.size());
  for (const auto& s : segments) labels.push_back(s.first <= a_e && a_s <= s.last ? 1 : 0);
  return labels;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

EmbeddingTable::EmbeddingTable(std::vector<std::string> tokens, std::size_t dim,
                               std::vector<float> values)
    : tokens_(std::move(tokens)), dim_(dim), values_(std::move(values)) {
  if (values_.size() != tokens_.size() * dim_) {
    throw DataError("embedding table holds " + std::to_string(values_.size()) +
                    " values for " + std::to_string(tokens_.size()) + " tokens of dim " +
                    std::to_string(dim_));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
  values_.resize(values_.size() + dim_, 0.0f);
}

std::size_t EmbeddingTable::lookup(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? oov_row() : it->second;
}

namespace {

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

}  // namespace

RawFeatures read_feature_file(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw DataError("feature file not found: " + file.string());
  const auto magic = read_pod<std::uint32_t>(is);
  const auto version = read_pod<std::uint32_t>(is);
  RawFeatures raw;
  raw.rows = read_pod<std::uint32_t>(is);
  raw.dim = read_pod<std::uint32_t>(is);
  if (!is || magic != kFeatureMagic) throw DataError("bad feature file header: " + file.string());
  if (version != kFeatureVersion) {
    throw DataError("unsupported feature file version " + std::to_string(version) + ": " +
                    file.string());
  }
  raw.values.resize(raw.rows * raw.dim);
  is.read(reinterpret_cast<char*>(raw.values.data()),
          static_cast<std::streamsize>(raw.values.size() * sizeof(float)));
  if (!is) throw DataError("truncated feature file: " + file.string());
  return raw;
}

void write_feature_file(const fs::path& file, const RawFeatures& features) {
  if (features.values.size() != features.rows * features.dim) {
    throw DataError("write_feature_file: value count does not match rows x dim");
  }
  ensure_parent(file);
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write feature file: " + file.string());
  write_pod<std::uint32_t>(os, kFeatureMagic);
  write_pod<std::uint32_t>(os, kFeatureVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(features.rows));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(features.dim));
  os.write(reinterpret_cast<const char*>(features.values.data()),
           static_cast<std::streamsize>(features.values.size() * sizeof(float)));
}

EmbeddingTable read_embeddings(const fs::path& table_file, const fs::path& vocab_file) {
  std::ifstream is(table_file, std::ios::binary);
  if (!is) throw DataError("embedding table not found: " + table_file.string());
  const auto magic = read_pod<std::uint32_t>(is);
  const auto vocab = read_pod<std::uint32_t>(is);
  const auto dim = read_pod<std::uint32_t>(is);
  if (!is || magic != kEmbeddingMagic) {
    throw DataError("bad embedding table header: " + table_file.string());
  }
  std::vector<float> values(static_cast<std::size_t>(vocab) * dim);
  is.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!is) throw DataError("truncated embedding table: " + table_file.string());

  std::ifstream vs(vocab_file);
  if (!vs) throw DataError("vocabulary file not found: " + vocab_file.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(vs, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  if (tokens.size() != vocab) {
    throw DataError("vocabulary has " + std::to_string(tokens.size()) +
                    " lines but the embedding table has " + std::to_string(vocab) + " rows");
  }
  return EmbeddingTable(std::move(tokens), dim, std::move(values));
}

void write_embeddings(const fs::path& table_file, const fs::path& vocab_file,
                      const std::vector<std::string>& tokens, std::size_t dim,
                      const std::vector<float>& values) {
  if (values.size() != tokens.size() * dim) {
    throw DataError("write_embeddings: value count does not match vocab x dim");
  }
  ensure_parent(table_file);
  std::ofstream os(table_file, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write embedding table: " + table_file.string());
  write_pod<std::uint32_t>(os, kEmbeddingMagic);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tokens.size()));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(dim));
  os.write(reinterpret_cast<const char*>(values.data()),
           static_cast<std::streamsize>(values.size() * sizeof(float)));
  ensure_parent(vocab_file);
  std::ofstream vs(vocab_file, std::ios::trunc);
  for (const auto& t : tokens) vs << t << '\n';
}

std::vector<MomentAnnotation> read_manifest(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw DataError("manifest not found: " + file.string());
  std::vector<MomentAnnotation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    MomentAnnotation a;
    try {
      const auto j = nlohmann::json::parse(line);
      a.id = j.contains("id") ? j.at("id").get<std::string>() : std::to_string(line_no);
      a.video_id = j.at("video_id").get<std::string>();
      a.duration = j.at("duration").get<double>();
      a.start = j.at("start").get<double>();
      a.end = j.at("end").get<double>();
      a.query = j.at("query").get<std::string>();
      a.split = j.value("split", std::string("train"));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    a.tokens = tokenize(a.query);
    out.push_back(std::move(a));
  }
  return out;
}

void write_manifest(const fs::path& file, const std::vector<MomentAnnotation>& annotations) {
  ensure_parent(file);
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw DataError("cannot write manifest: " + file.string());
  for (const auto& a : annotations) {
    nlohmann::json j = {{"id", a.id},       {"video_id", a.video_id}, {"duration", a.duration},
                        {"start", a.start}, {"end", a.end},           {"query", a.query},
                        {"split", a.split}};
    os << j.dump() << '\n';
  }
}

void write_dataset_descriptor(const fs::path& file, const DatasetDescriptor& d) {
  ensure_parent(file);
  nlohmann::json j = {{"annotations", d.annotations},
                      {"features", d.features},
                      {"embeddings", d.embeddings},
                      {"vocab", d.vocab},
                      {"feature_dim", d.feature_dim}};
  std::ofstream os(file, std::ios::trunc);
  os << j.dump(2) << '\n';
}

namespace {

void validate_annotation(const MomentAnnotation& a) {
  const std::string who = "annotation '" + a.id + "' (video " + a.video_id + ")";
  if (!(a.duration > 0.0)) throw DataError(who + ": duration must be positive");
  if (!(a.start >= 0.0 && a.start <= a.end)) {
    throw DataError(who + ": need 0 <= start <= end");
  }
  if (a.end > a.duration) {
    throw DataError(who + ": end " + std::to_string(a.end) + " exceeds duration " +
                    std::to_string(a.duration));
  }
  if (a.tokens.empty()) throw DataError(who + ": empty query");
  if (a.split != "train" && a.split != "val" && a.split != "test") {
    throw DataError(who + ": unknown split '" + a.split + "'");
  }
}

}  // namespace

Dataset load_dataset(const fs::path& path) {
  Dataset ds;
  fs::path descriptor_file = path;
  if (fs::is_directory(path)) descriptor_file = path / "dataset.json";
  if (!fs::exists(descriptor_file)) {
    throw DataError("dataset descriptor not found: " + descriptor_file.string());
  }
  ds.root = descriptor_file.parent_path();
  {
    std::ifstream is(descriptor_file);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(descriptor_file.string() + ": " + e.what());
    }
    auto& d = ds.descriptor;
    d.annotations = j.value("annotations", d.annotations);
    d.features = j.value("features", d.features);
    d.embeddings = j.value("embeddings", d.embeddings);
    d.vocab = j.value("vocab", d.vocab);
    if (!j.contains("feature_dim")) {
      throw DataError(descriptor_file.string() + ": missing feature_dim");
    }
    d.feature_dim = j.at("feature_dim").get<std::size_t>();
  }

  ds.annotations = read_manifest(ds.root / ds.descriptor.annotations);
  ds.embeddings = read_embeddings(ds.root / ds.descriptor.embeddings, ds.root / ds.descriptor.vocab);

  for (const auto& a : ds.annotations) {
    validate_annotation(a);
    if (ds.features.count(a.video_id)) continue;
    const fs::path file = ds.root / ds.descriptor.features / (a.video_id + ".bin");
    if (!fs::exists(file)) {
      throw DataError("annotation '" + a.id + "': feature file for video '" + a.video_id +
                      "' not found at " + file.string());
    }
    RawFeatures raw = read_feature_file(file);
    if (raw.dim != ds.descriptor.feature_dim) {
      throw DataError("video '" + a.video_id + "': feature dim " + std::to_string(raw.dim) +
                      " differs from dataset feature_dim " +
                      std::to_string(ds.descriptor.feature_dim));
    }
    ds.features.emplace(a.video_id, std::move(raw));
  }

  ds.report.annotations = ds.annotations.size();
  ds.report.videos = ds.features.size();
  for (const auto& a : ds.annotations) {
    for (const auto& t : a.tokens) {
      ++ds.report.tokens;
      if (!ds.embeddings.contains(t)) ++ds.report.oov_tokens;
    }
  }
  return ds;
}

std::vector<const MomentAnnotation*> Dataset::split(std::string_view name) const {
  std::vector<const MomentAnnotation*> out;
  for (const auto& a : annotations) {
    if (a.split == name) out.push_back(&a);
  }
  return out;
}

const RawFeatures& Dataset::features_for(const std::string& video_id) const {
  auto it = features.find(video_id);
  if (it == features.end()) throw DataError("no features loaded for video '" + video_id + "'");
  return it->second;
}

PreparedSample prepare_sample(const Dataset& dataset, const MomentAnnotation& annotation,
                              const LabelConfig& config) {
  PreparedSample s;
  s.id = annotation.id;
  s.duration = annotation.duration;
  s.video = resample_features(dataset.features_for(annotation.video_id), config.max_length,
                              annotation.video_id);
  const std::size_t n = config.max_length;
  const std::size_t valid = s.video.valid_length;

  s.query_dim = dataset.embeddings.dim();
  s.query_length = annotation.tokens.size();
  s.query.reserve(s.query_length * s.query_dim);
  const auto& table = dataset.embeddings.values();
  for (const auto& token : annotation.tokens) {
    const std::size_t row = dataset.embeddings.lookup(token);
    for (std::size_t j = 0; j < s.query_dim; ++j) s.query.push_back(table[row * s.query_dim + j]);
  }

  s.start_index = time_to_span(annotation.start, annotation.duration, valid);
  s.end_index = time_to_span(annotation.end, annotation.duration, valid);
  auto highlight = build_highlight_labels(s.start_index, s.end_index, valid, config.extension_ratio);
  highlight.resize(n, 0);
  s.highlight = std::move(highlight);
  for (std::size_t l : config.scales) {
    s.nil_labels.push_back(build_nil_labels(s.start_index, s.end_index, split_segments(n, l)));
  }
  return s;
}

}  // namespace vslnet
