#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vslnet/data.hpp"

namespace vslnet {

class Model;

struct PredictedMoment {
  std::size_t start_index = 0;
  std::size_t end_index = 0;
  double start_time = 0.0;
  double end_time = 0.0;
  double probability = 0.0;  // P_s(start) * P_e(end)
  std::size_t scale = 0;     // index into the model's scale list
};

// Best ordered pair start <= end by joint probability, found with a running
// prefix maximum. Ties resolve to the smallest start, then the smallest end.
PredictedMoment locate_span(std::span<const double> start_probs, std::span<const double> end_probs);

// Highest joint probability; ties go to the earlier candidate (smaller scale).
PredictedMoment select_candidate_pm(std::span<const PredictedMoment> candidates);

// Union of the pair with the largest IoU of their index intervals. Falls back to
// select_candidate_pm when no pair overlaps. The union reports the larger of
// the pair's probabilities.
PredictedMoment select_candidate_union(std::span<const PredictedMoment> candidates);

struct Interval {
  double start = 0.0;
  double end = 0.0;
};

// Temporal IoU; two identical zero-length intervals score 1.
double iou(Interval a, Interval b);

enum class SelectionStrategy { kMaxProbability, kUnion };
SelectionStrategy parse_strategy(std::string_view name);
std::string_view strategy_name(SelectionStrategy s);

struct Prediction {
  std::string id;
  PredictedMoment moment;
};

// Runs the model on every annotation of `split` and decodes one moment each.
std::vector<Prediction> predict(const Model& model, const Dataset& dataset,
                                std::string_view split,
                                SelectionStrategy strategy = SelectionStrategy::kMaxProbability);

void write_predictions(const std::filesystem::path& file, std::span<const Prediction> predictions);
std::vector<Prediction> read_predictions(const std::filesystem::path& file);

struct SampleResult {
  std::string id;
  double iou = 0.0;
  double duration = 0.0;      // video duration, seconds
  double length_error = 0.0;  // predicted minus true moment length, seconds
};

struct LengthBucket {
  std::string label;
  std::size_t count = 0;
  double miou = 0.0;
};

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<double> rank1;  // percentages aligned with thresholds
  double miou = 0.0;
  std::vector<SampleResult> samples;
  std::vector<std::size_t> histogram;  // 10 IoU bins of width 0.1, last bin closed
  std::vector<LengthBucket> length_buckets;
};

inline const std::vector<double> kDefaultThresholds = {0.3, 0.5, 0.7};
// Upper edges (seconds) of the video-length buckets; the last bucket is open.
inline const std::vector<double> kLengthBucketEdges = {30.0, 60.0, 120.0, 240.0};

// Matches predictions to ground truth by id. Every annotation needs exactly one
// prediction; extra or missing ids raise DataError naming them.
EvalReport evaluate(std::span<const Prediction> predictions,
                    std::span<const MomentAnnotation> ground_truth,
                    std::span<const double> thresholds = kDefaultThresholds);

nlohmann::ordered_json report_to_json(const EvalReport& report);
// report.json plus metrics.csv, histogram.csv, length_buckets.csv and samples.csv.
void write_report(const std::filesystem::path& dir, const EvalReport& report);

}  // namespace vslnet
