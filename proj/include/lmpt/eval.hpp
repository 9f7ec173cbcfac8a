#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "lmpt/dataset.hpp"
#include "lmpt/registry.hpp"

namespace lmpt {

struct EvalConfig {
  std::vector<double> thresholds = default_thresholds();
  bool pck_per_landmark = false;  // average per-landmark curves instead of pooling

  void validate() const;
  /// Ten thresholds spaced evenly over [1, 8] mm.
  static std::vector<double> default_thresholds();
};

using ErrorMap = std::map<std::string, double>;

/// Euclidean distance per name present in both sets. EmptyEval if none.
ErrorMap landmark_errors(const LandmarkSet& pred, const LandmarkSet& gt);

struct MaeSummary {
  std::vector<std::string> landmarks;
  std::vector<double> mae;
  double mean = 0.0;
};

/// Per-landmark mean over the samples containing it, then the mean of those.
/// Landmarks follow `order`; names outside it are appended alphabetically.
MaeSummary aggregate_mae(const std::vector<ErrorMap>& per_sample, const std::vector<std::string>& order = {});

/// Percentage of errors at or below each threshold.
std::vector<double> pck_curve(const std::vector<ErrorMap>& per_sample, const std::vector<double>& thresholds,
                              bool per_landmark = false);

/// Distance from each landmark to its nearest cloud point.
ErrorMap quantization_errors(const PointCloud& cloud, const LandmarkSet& landmarks);

using Predictor = std::function<LandmarkSet(const Sample&)>;

/// Predicts the training mean of each class in the normalized frame, mapped
/// back through the test sample's own normalization.
Predictor baseline_mean_position(const std::vector<Sample>& train, const LabelRegistry& registry);

struct EvalReport {
  MaeSummary mae;
  std::vector<double> thresholds;
  std::vector<double> pck;
  bool pck_per_landmark = false;
  std::vector<std::string> sample_ids;
  std::vector<ErrorMap> per_sample;
  MaeSummary quantization;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();  // seed, config hash, ...
};

/// Runs the predictor on every sample (optionally on `threads` workers; the
/// result does not depend on the count).
EvalReport evaluate(const std::vector<Sample>& samples, const Predictor& predictor, const EvalConfig& config,
                    const std::vector<std::string>& order = {}, std::size_t threads = 1);

enum class ReportFormat { Csv, Markdown };

std::string render_report(const EvalReport& report, ReportFormat format);
void emit_report(const EvalReport& report, const std::string& path, ReportFormat format);

}  // namespace lmpt
