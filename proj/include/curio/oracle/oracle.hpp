#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "curio/render/image.hpp"

namespace curio::oracle {

/// A point in the (position t, luminance l) parameter plane.
using Params = std::array<double, 2>;

inline constexpr double kBlobWidth = 0.05;

/// 1 x width strip: l * exp(-((x - t) / sigma)^2) at pixel centers
/// x = (i + 0.5) / width. Throws InvalidConfig for width < 16.
std::vector<double> render_analytic(double t, double l, std::size_t width,
                                    double sigma = kBlobWidth);

/// Mean squared difference between two strips and its gradient with
/// respect to the first strip's (t, l).
double l2_analytic(const Params& pred, const Params& target, std::size_t width, Params* grad,
                   double sigma = kBlobWidth);

/// Per-axis kernel responses: K[j][a] = mean_i exp(-((P[i][a] - S[j][a]) / h)^2).
std::vector<Params> kde_kernel(const std::vector<Params>& pred, const std::vector<Params>& samples,
                               double bandwidth);

/// Sample variance of E_j = (K[j][0] + K[j][1]) / 2 over the reference samples.
double discrepancy(const std::vector<Params>& responses);

/// discrepancy(kde_kernel(pred, samples, h)) with its gradient per prediction.
double discrepancy_with_grad(const std::vector<Params>& pred, const std::vector<Params>& samples,
                             double bandwidth, std::vector<Params>* grad);

struct OracleConfig {
  std::size_t problems = 64;
  std::size_t steps = 2000;
  double lr = 0.01;
  bool curiosity = false;
  double weight = 10.0;  // weight of the discrepancy term
  double bandwidth = 0.05;
  std::size_t samples = 300;
  std::size_t width = 64;
  double clamp_lo = -0.1;
  double clamp_hi = 1.1;
  double collapse_below = 0.1;
  double success_within = 0.05;
  std::uint64_t seed = 0;

  /// Throws InvalidConfig.
  void validate() const;
};

struct TrajectoryRow {
  std::size_t step;
  std::size_t problem;
  double t, l;
  double loss;  // that problem's image loss
  double d;     // discrepancy of the whole set at this step
};

struct OracleResult {
  std::vector<Params> targets;
  std::vector<Params> initial;
  std::vector<Params> final;
  std::vector<double> final_error;  // max(|t - t*|, |l - l*|)
  std::vector<bool> collapsed;
  double collapse_fraction = 0.0;
  double success_fraction = 0.0;
  std::vector<TrajectoryRow> trajectory;  // every `record_every` steps
};

/// Jointly optimizes all problems with plain gradient descent and clamping.
/// `record_every` of 0 keeps only the first and last state.
OracleResult optimize_joint(const OracleConfig& cfg, std::size_t record_every = 0);

/// Parameter-plane snapshot: targets in green, current estimates in red.
render::Image plot_state(const std::vector<Params>& targets, const std::vector<Params>& current,
                         std::size_t size = 128);

/// trajectory.csv, summary.txt and one frame PNG per recorded step.
void write_oracle_outputs(const OracleResult& r, const OracleConfig& cfg,
                          const std::filesystem::path& dir);

}  // namespace curio::oracle
