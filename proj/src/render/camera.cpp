#include "curio/render/camera.hpp"

#include <numbers>
#include <string>

namespace curio::render {

namespace {

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  return {a[0] / n, a[1] / n, a[2] / n};
}

}  // namespace

void Camera::validate() const {
  if (!(fov_y > 0.0 && fov_y < std::numbers::pi)) {
    throw InvalidConfig("camera fov_y must lie in (0, pi)");
  }
  if (image_size == 0) throw InvalidConfig("camera image_size must be positive");
  const Vec3 axis = sub(look_at, position);
  if (!(norm(axis) > 0.0)) throw InvalidConfig("camera position equals look_at");
  if (!(norm(cross(axis, up)) > 1e-12)) {
    throw InvalidConfig("camera up vector is parallel to the viewing axis");
  }
  if (projection == Projection::orthographic && !(ortho_half_extent > 0.0)) {
    throw InvalidConfig("orthographic half extent must be positive");
  }
}

Frame camera_frame(const Camera& cam) {
  const Vec3 forward = normalized(sub(cam.look_at, cam.position));
  const Vec3 right = normalized(cross(forward, cam.up));
  return {right, cross(right, forward), forward};
}

double focal_pixels(const Camera& cam) {
  return static_cast<double>(cam.image_size) / 2.0 / std::tan(cam.fov_y / 2.0);
}

}  // namespace curio::render
