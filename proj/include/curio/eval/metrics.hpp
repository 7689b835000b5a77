#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "curio/render/image.hpp"
#include "curio/scene.hpp"
#include "curio/worlds/spec.hpp"

namespace curio::eval {

using Point = std::array<double, 3>;

/// perm[i] is the index in `b` matched to a[i].
using Permutation = std::vector<std::size_t>;

/// Largest count solved by trying every permutation.
inline constexpr std::size_t kExhaustiveLimit = 8;

/// Minimizes the summed Euclidean distance between matched positions.
/// Exhaustive up to kExhaustiveLimit (ties go to the lexicographically
/// smallest permutation), Hungarian beyond. Throws CountMismatch.
Permutation optimal_assignment(const std::vector<Point>& a, const std::vector<Point>& b);
Permutation assignment_exhaustive(const std::vector<Point>& a, const std::vector<Point>& b);
Permutation assignment_hungarian(const std::vector<Point>& a, const std::vector<Point>& b);
double assignment_cost(const std::vector<Point>& a, const std::vector<Point>& b,
                       const Permutation& perm);

/// Hungarian solution for |a| <= |b|: every a[i] gets a distinct b index.
Permutation partial_assignment(const std::vector<Point>& a, const std::vector<Point>& b);

struct MetricWeights {
  std::array<double, 5> w{1.0, 1.0, 1.0, 1.0, 1.0};  // indexed by Group

  double operator[](Group g) const { return w[static_cast<std::size_t>(g)]; }
  double& operator[](Group g) { return w[static_cast<std::size_t>(g)]; }
};

struct ParamError {
  double total = 0.0;
  /// Unweighted error per group: summed distances per object; light is the
  /// angle between directions in radians.
  std::array<double, 5> group{};
  std::size_t matched = 0;

  double operator[](Group g) const { return group[static_cast<std::size_t>(g)]; }
};

/// Assignment-based parameter error between two codes of the same world.
/// Objects are matched by position only; only the world's groups count.
/// Throws CountMismatch when the object counts differ.
ParamError param_metric(const SceneCode& a, const SceneCode& b, const MetricWeights& w,
                        const worlds::WorldSpec& world);

/// As param_metric, but matches the smaller object set into the larger one.
ParamError matched_param_metric(const SceneCode& a, const SceneCode& b, const MetricWeights& w,
                                const worlds::WorldSpec& world);

/// Proposals with confidence >= threshold, in their original order.
SceneCode select_confident(const SceneCode& s, double threshold = 0.5);

/// Mean squared difference between each proposal's confidence and whether
/// it is matched to a ground-truth object (1) or left over (0).
double confidence_error(const SceneCode& pred, const SceneCode& gt);

/// (1 - SSIM) / 2 with an 11x11 Gaussian window (sigma 1.5) over the valid
/// region, averaged over channels. Throws ShapeMismatch.
double dssim(const render::Image& a, const render::Image& b);

}  // namespace curio::eval
