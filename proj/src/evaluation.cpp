#include "vslnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "vslnet/network.hpp"

namespace vslnet {

namespace fs = std::filesystem;

PredictedMoment locate_span(std::span<const double> ps, std::span<const double> pe) {
  if (ps.empty() || ps.size() != pe.size()) {
    throw ShapeError("locate_span: boundary distributions of length " + std::to_string(ps.size()) +
                     " and " + std::to_string(pe.size()));
  }
  PredictedMoment best;
  best.probability = -1.0;
  std::size_t arg = 0;  // earliest start attaining the prefix max
  for (std::size_t j = 0; j < ps.size(); ++j) {
    if (ps[j] > ps[arg]) arg = j;
    const double p = ps[arg] * pe[j];
    if (p > best.probability) {
      best.start_index = arg;
      best.end_index = j;
      best.probability = p;
    }
  }
  return best;
}

PredictedMoment select_candidate_pm(std::span<const PredictedMoment> c) {
  if (c.empty()) throw ContractError("candidate selection needs at least one candidate");
  std::size_t best = 0;
  for (std::size_t i = 1; i < c.size(); ++i) {
    if (c[i].probability > c[best].probability) best = i;
  }
  return c[best];
}

namespace {

double index_iou(const PredictedMoment& a, const PredictedMoment& b) {
  return iou({static_cast<double>(a.start_index), static_cast<double>(a.end_index)},
             {static_cast<double>(b.start_index), static_cast<double>(b.end_index)});
}

}  // namespace

PredictedMoment select_candidate_union(std::span<const PredictedMoment> c) {
  if (c.empty()) throw ContractError("candidate selection needs at least one candidate");
  if (c.size() == 1) return c[0];
  double best = 0.0;
  std::size_t bi = 0, bj = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = i + 1; j < c.size(); ++j) {
      const double v = index_iou(c[i], c[j]);
      if (v > best) {
        best = v;
        bi = i;
        bj = j;
      }
    }
  }
  if (best <= 0.0) return select_candidate_pm(c);
  PredictedMoment u = c[bi].probability >= c[bj].probability ? c[bi] : c[bj];
  u.start_index = std::min(c[bi].start_index, c[bj].start_index);
  u.end_index = std::max(c[bi].end_index, c[bj].end_index);
  u.start_time = std::min(c[bi].start_time, c[bj].start_time);
  u.end_time = std::max(c[bi].end_time, c[bj].end_time);
  u.probability = std::max(c[bi].probability, c[bj].probability);
  return u;
}

double iou(Interval a, Interval b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  if (uni <= 0.0) return (a.start == b.start && a.end == b.end) ? 1.0 : 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

SelectionStrategy parse_strategy(std::string_view name) {
  if (name == "pm" || name == "max") return SelectionStrategy::kMaxProbability;
  if (name == "union" || name == "u") return SelectionStrategy::kUnion;
  throw ConfigError("unknown selection strategy '" + std::string(name) + "' (expected pm or union)");
}

std::string_view strategy_name(SelectionStrategy s) {
  return s == SelectionStrategy::kUnion ? "union" : "pm";
}

std::vector<Prediction> predict(const Model& model, const Dataset& dataset, std::string_view split,
                                SelectionStrategy strategy) {
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  const LabelConfig labels = cfg.labels();
  const ForwardContext ctx;
  std::vector<Prediction> out;
  for (const auto* a : dataset.split(split)) {
    const PreparedSample s = prepare_sample(dataset, *a, labels);
    const ForwardOutput f = model.forward(make_input(s, cfg.dtype), ctx);
    std::vector<PredictedMoment> candidates;
    for (std::size_t k = 0; k < f.scales.size(); ++k) {
      PredictedMoment m = locate_span(f.start_probs(k), f.end_probs(k));
      m.scale = k;
      m.start_time = span_to_time(m.start_index, s.duration, s.video.valid_length);
      m.end_time = span_to_time(m.end_index, s.duration, s.video.valid_length);
      candidates.push_back(m);
    }
    out.push_back({a->id, strategy == SelectionStrategy::kUnion
                              ? select_candidate_union(candidates)
                              : select_candidate_pm(candidates)});
  }
  return out;
}

void write_predictions(const fs::path& file, std::span<const Prediction> predictions) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary);
  if (!os) throw DataError("cannot write predictions to " + file.string());
  for (const auto& p : predictions) {
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["start_index"] = p.moment.start_index;
    j["end_index"] = p.moment.end_index;
    j["start_time"] = p.moment.start_time;
    j["end_time"] = p.moment.end_time;
    j["probability"] = p.moment.probability;
    j["scale"] = p.moment.scale;
    os << j.dump() << '\n';
  }
}

std::vector<Prediction> read_predictions(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw DataError("cannot open prediction file " + file.string());
  std::vector<Prediction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Prediction p;
      p.id = j.at("id").get<std::string>();
      p.moment.start_time = j.at("start_time").get<double>();
      p.moment.end_time = j.at("end_time").get<double>();
      p.moment.start_index = j.value("start_index", std::size_t{0});
      p.moment.end_index = j.value("end_index", std::size_t{0});
      p.moment.probability = j.value("probability", 1.0);
      p.moment.scale = j.value("scale", std::size_t{0});
      if (p.moment.end_time < p.moment.start_time) {
        throw DataError("end_time precedes start_time");
      }
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size() && i < 5; ++i) s += (i ? ", " : "") + ids[i];
  if (ids.size() > 5) s += ", ... (" + std::to_string(ids.size()) + " total)";
  return s;
}

std::string bucket_label(std::size_t b) {
  const auto& e = kLengthBucketEdges;
  auto fmt = [](double v) { return std::to_string(static_cast<long long>(v)); };
  if (b == 0) return "<" + fmt(e[0]);
  if (b == e.size()) return ">=" + fmt(e.back());
  return fmt(e[b - 1]) + "-" + fmt(e[b]);
}

std::string threshold_key(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

EvalReport evaluate(std::span<const Prediction> predictions,
                    std::span<const MomentAnnotation> ground_truth,
                    std::span<const double> thresholds) {
  std::map<std::string, const Prediction*> by_id;
  std::vector<std::string> duplicates;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.id, &p).second) duplicates.push_back(p.id);
  }
  if (!duplicates.empty()) throw DataError("duplicate prediction ids: " + join_ids(duplicates));
  std::vector<std::string> missing;
  std::set<std::string> seen;
  for (const auto& a : ground_truth) {
    if (!by_id.count(a.id)) missing.push_back(a.id);
    seen.insert(a.id);
  }
  std::vector<std::string> extra;
  for (const auto& [id, p] : by_id) {
    if (!seen.count(id)) extra.push_back(id);
  }
  if (!missing.empty()) throw DataError("no prediction for sample ids: " + join_ids(missing));
  if (!extra.empty()) throw DataError("predictions for unknown sample ids: " + join_ids(extra));
  if (ground_truth.empty()) throw DataError("evaluation needs at least one sample");

  EvalReport r;
  r.thresholds.assign(thresholds.begin(), thresholds.end());
  r.rank1.assign(thresholds.size(), 0.0);
  r.histogram.assign(10, 0);
  std::vector<std::size_t> hits(thresholds.size(), 0);
  std::vector<double> bucket_sum(kLengthBucketEdges.size() + 1, 0.0);
  std::vector<std::size_t> bucket_count(bucket_sum.size(), 0);
  double total = 0.0;
  for (const auto& a : ground_truth) {
    const auto& m = by_id.at(a.id)->moment;
    SampleResult s;
    s.id = a.id;
    s.iou = iou({m.start_time, m.end_time}, {a.start, a.end});
    s.duration = a.duration;
    s.length_error = (m.end_time - m.start_time) - (a.end - a.start);
    total += s.iou;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      if (s.iou >= thresholds[t]) ++hits[t];
    }
    ++r.histogram[std::min<std::size_t>(9, static_cast<std::size_t>(s.iou * 10.0))];
    const auto b = static_cast<std::size_t>(
        std::upper_bound(kLengthBucketEdges.begin(), kLengthBucketEdges.end(), a.duration) -
        kLengthBucketEdges.begin());
    bucket_sum[b] += s.iou;
    ++bucket_count[b];
    r.samples.push_back(std::move(s));
  }
  const double count = static_cast<double>(ground_truth.size());
  r.miou = total / count;
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    r.rank1[t] = 100.0 * static_cast<double>(hits[t]) / count;
  }
  for (std::size_t b = 0; b < bucket_sum.size(); ++b) {
    r.length_buckets.push_back({bucket_label(b), bucket_count[b],
                                bucket_count[b] ? bucket_sum[b] / bucket_count[b] : 0.0});
  }
  return r;
}

nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json rank = nlohmann::ordered_json::object();
  for (std::size_t t = 0; t < r.thresholds.size(); ++t) rank[threshold_key(r.thresholds[t])] = r.rank1[t];
  j["samples"] = r.samples.size();
  j["miou"] = r.miou;
  j["rank1"] = rank;
  j["histogram"] = r.histogram;
  auto buckets = nlohmann::ordered_json::array();
  for (const auto& b : r.length_buckets) {
    buckets.push_back({{"bucket", b.label}, {"count", b.count}, {"miou", b.miou}});
  }
  j["length_buckets"] = buckets;
  auto per = nlohmann::ordered_json::array();
  for (const auto& s : r.samples) {
    per.push_back({{"id", s.id}, {"iou", s.iou}, {"duration", s.duration},
                   {"length_error", s.length_error}});
  }
  j["per_sample"] = per;
  return j;
}

void write_report(const fs::path& dir, const EvalReport& r) {
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw DataError("cannot write " + (dir / name).string());
    return os;
  };
  open("report.json") << report_to_json(r).dump(2) << '\n';
  {
    auto os = open("metrics.csv");
    os << "metric,value\n";
    for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
      os << "rank1_iou_" << threshold_key(r.thresholds[t]) << ',' << num(r.rank1[t]) << '\n';
    }
    os << "miou," << num(r.miou) << '\n';
  }
  {
    auto os = open("histogram.csv");
    os << "iou_low,iou_high,count\n";
    for (std::size_t b = 0; b < r.histogram.size(); ++b) {
      os << threshold_key(b / 10.0) << ',' << threshold_key((b + 1) / 10.0) << ',' << r.histogram[b] << '\n';
    }
  }
  {
    auto os = open("length_buckets.csv");
    os << "video_length,count,miou\n";
    for (const auto& b : r.length_buckets) os << b.label << ',' << b.count << ',' << num(b.miou) << '\n';
  }
  {
    auto os = open("samples.csv");
    os << "id,iou,duration,length_error\n";
    for (const auto& s : r.samples) {
      os << s.id << ',' << num(s.iou) << ',' << num(s.duration) << ',' << num(s.length_error)
         << '\n';
    }
  }
}

}  // namespace vslnet
