#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "curio/eval/metrics.hpp"
#include "curio/render/renderer.hpp"

namespace curio::eval {

struct SceneResult {
  double param = 0.0;
  std::array<double, 5> group{};  // confidence holds the confidence MSE
  double dssim = 0.0;
  double count_error = 0.0;  // |kept proposals - true objects|
};

struct Metrics {
  double param = 0.0;
  std::array<double, 5> group{};
  double dssim = 0.0;
  double count_error = 0.0;
};

struct EvalReport {
  std::string world;
  GroupSet groups;
  std::vector<SceneResult> scenes;
  Metrics mean;  // mean over scenes

  void aggregate();
};

struct EvalOptions {
  MetricWeights weights;
  double confidence_threshold = 0.5;
  render::RenderSettings settings;
};

/// Scores predicted codes against ground truth: assignment-based parameter error
/// under position matching and DSSIM between the two codes rendered from
/// `camera`. Variable-count worlds first drop proposals below the
/// confidence threshold and match the smaller set into the larger.
EvalReport evaluate_codes(const std::vector<SceneCode>& pred, const std::vector<SceneCode>& gt,
                          const worlds::WorldSpec& world, const render::Camera& camera,
                          const EvalOptions& options = {});

/// Elementwise report / reference. A metric whose reference is not positive
/// has no ratio.
struct Ratios {
  std::optional<double> param;
  std::array<std::optional<double>, 5> group;
  std::optional<double> dssim;
};

Ratios ratio_report(const EvalReport& report, const EvalReport& reference);

std::string report_to_json(const EvalReport& report, const Ratios* ratios = nullptr);
/// Reads the aggregate part of a report; throws FormatError.
EvalReport report_from_json(const std::string& text);

/// Aligned text table with one column per enabled group.
std::string format_table(const EvalReport& report, const Ratios* ratios = nullptr);

}  // namespace curio::eval
