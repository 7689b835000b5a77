#pragma once

#include <array>
#include <cmath>
#include <cstddef>

#include "curio/errors.hpp"
#include "curio/render/dual.hpp"

namespace curio::render {

using Vec3 = std::array<double, 3>;

enum class Projection { perspective, orthographic };

struct Camera {
  double fov_y = 0.6283185307179586;  // 36 degrees
  std::size_t image_size = 64;
  Vec3 position{0.0, 0.0, 10.0};
  Vec3 look_at{0.0, 0.0, 0.0};
  Vec3 up{0.0, 1.0, 0.0};
  Projection projection = Projection::perspective;
  /// Half the visible side length in world units, orthographic only.
  double ortho_half_extent = 2.5;

  /// Throws InvalidConfig.
  void validate() const;
  bool operator==(const Camera&) const = default;
};

/// Orthonormal camera frame: right, true up, and forward (toward look_at).
struct Frame {
  Vec3 right, up, forward;
};

Frame camera_frame(const Camera& cam);

/// Focal length in pixels for the perspective camera.
double focal_pixels(const Camera& cam);

template <typename T>
struct Projected {
  T u;      // pixel column coordinate; pixel centers sit at i + 0.5
  T v;      // pixel row coordinate, growing downward
  T depth;  // distance along the viewing axis
};

inline constexpr double kNearPlane = 1e-6;

/// Pinhole (or orthographic) projection of a world point. Throws
/// BehindCamera when the point is not strictly in front of the camera.
template <typename T>
Projected<T> project(const std::array<T, 3>& p, const Camera& cam) {
  const Frame f = camera_frame(cam);
  const double half = static_cast<double>(cam.image_size) / 2.0;
  const std::array<T, 3> rel = {p[0] - cam.position[0], p[1] - cam.position[1],
                                p[2] - cam.position[2]};
  auto dot = [&](const Vec3& axis) {
    return rel[0] * axis[0] + rel[1] * axis[1] + rel[2] * axis[2];
  };
  const T depth = dot(f.forward);
  if (cam.projection == Projection::orthographic) {
    // Offsets are measured from the look-at point so the view is centered
    // on it regardless of where the camera sits along the axis.
    const std::array<T, 3> c = {p[0] - cam.look_at[0], p[1] - cam.look_at[1],
                                p[2] - cam.look_at[2]};
    const T x = c[0] * f.right[0] + c[1] * f.right[1] + c[2] * f.right[2];
    const T y = c[0] * f.up[0] + c[1] * f.up[1] + c[2] * f.up[2];
    const double scale = half / cam.ortho_half_extent;
    return {half + x * scale, half - y * scale, depth};
  }
  if (!(value_of(depth) > kNearPlane)) {
    throw BehindCamera("point lies behind the camera (depth " +
                       std::to_string(value_of(depth)) + ")");
  }
  const double fpx = focal_pixels(cam);
  return {half + fpx * dot(f.right) / depth, half - fpx * dot(f.up) / depth, depth};
}

/// Radius in pixels of a sphere or circle of world radius `r` at `depth`.
template <typename T>
T projected_radius(const T& r, const T& depth, const Camera& cam) {
  if (cam.projection == Projection::orthographic) {
    return r * (static_cast<double>(cam.image_size) / (2.0 * cam.ortho_half_extent));
  }
  return r * focal_pixels(cam) / depth;
}

}  // namespace curio::render
