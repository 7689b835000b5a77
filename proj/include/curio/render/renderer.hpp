#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "curio/autodiff/tape.hpp"
#include "curio/render/camera.hpp"
#include "curio/render/dual.hpp"
#include "curio/render/image.hpp"
#include "curio/scene.hpp"
#include "curio/worlds/spec.hpp"

namespace curio::render {

struct RenderSettings {
  /// Silhouette sharpness per pixel; 0 selects 50 / image_size, an edge
  /// about one fiftieth of the view wide.
  double softness = 0.0;
  bool depth_sort = true;
  double ambient = 0.2;

  double k(std::size_t image_size) const {
    return softness > 0.0 ? softness : 50.0 / static_cast<double>(image_size);
  }
};

enum class Primitive { circle2d, sphere };

/// Everything that shapes one object's layer. Index order of the dual
/// parameters: center 0-2, radius 3, rgb 4-6, azimuth 7, elevation 8.
template <typename T>
struct ObjectParams {
  std::array<T, 3> center{};
  T radius{};
  std::array<T, 3> rgb{};
  T azimuth{};
  T elevation{};
};

inline constexpr int kObjectParams = 9;

template <typename T>
struct PixelSample {
  T alpha;
  std::array<T, 3> rgb;
};

/// Per-object quantities shared by all pixels.
template <typename T>
struct Placement {
  Projected<T> proj;
  T r_px;
  std::array<T, 3> light;  // unit direction toward the light
};

template <typename T>
Placement<T> place(const ObjectParams<T>& o, const Camera& cam) {
  using std::cos;
  using std::sin;
  Placement<T> p{project(o.center, cam), T{}, {}};
  p.r_px = projected_radius(o.radius, p.proj.depth, cam);
  const T ce = cos(o.elevation);
  p.light = {ce * cos(o.azimuth), ce * sin(o.azimuth), sin(o.elevation)};
  return p;
}

/// Silhouette alpha and shaded color of one object at pixel center (px, py).
template <typename T>
PixelSample<T> sample_pixel(const ObjectParams<T>& o, const Placement<T>& pl,
                            Primitive prim, const Frame& frame, double px, double py,
                            double k, double ambient) {
  using std::sqrt;
  const T dx = px - pl.proj.u;
  const T dy = py - pl.proj.v;
  // The tiny offset keeps the distance differentiable at the exact center.
  const T dist = sqrt(dx * dx + dy * dy + 1e-12);
  PixelSample<T> s{sigmoid((pl.r_px - dist) * k), o.rgb};
  if (prim == Primitive::circle2d) return s;

  // Sphere normal reconstructed from the offset inside the projected disc;
  // outside the disc the rim normal is used (the alpha fades it out).
  const T a = dx / pl.r_px;
  const T b = -dy / pl.r_px;
  const T rho2 = a * a + b * b;
  const T nz = sqrt(max_floor(1.0 - rho2, 0.0) + 1e-4);
  const T len = sqrt(rho2 + nz * nz);
  std::array<T, 3> n{};
  for (int i = 0; i < 3; ++i) {
    n[i] = (a * frame.right[i] + b * frame.up[i] - nz * frame.forward[i]) / len;
  }
  const T ndotl = n[0] * pl.light[0] + n[1] * pl.light[1] + n[2] * pl.light[2];
  const T shade = max_floor(ndotl, ambient);
  for (int i = 0; i < 3; ++i) s.rgb[i] = o.rgb[i] * shade;
  return s;
}

template <typename T>
struct LayerT {
  std::size_t size = 0;
  std::vector<T> rgb;    // HWC
  std::vector<T> alpha;  // HW
  double depth = 0.0;    // detached sort key
};

using Layer = LayerT<double>;

template <typename T>
LayerT<T> render_layer(const ObjectParams<T>& o, Primitive prim, const Camera& cam,
                       const RenderSettings& settings) {
  if (!(value_of(o.radius) > 0.0)) throw InvalidConfig("object radius must be positive");
  const Placement<T> pl = place(o, cam);
  const Frame frame = camera_frame(cam);
  const std::size_t s = cam.image_size;
  const double k = settings.k(s);
  LayerT<T> layer;
  layer.size = s;
  layer.rgb.resize(s * s * 3);
  layer.alpha.resize(s * s);
  layer.depth = value_of(pl.proj.depth);
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const PixelSample<T> px = sample_pixel(o, pl, prim, frame, x + 0.5, y + 0.5, k,
                                             settings.ambient);
      layer.alpha[y * s + x] = px.alpha;
      for (int c = 0; c < 3; ++c) layer.rgb[(y * s + x) * 3 + c] = px.rgb[c];
    }
  }
  return layer;
}

/// Flat-colored disc in the plane z = 0 seen through an orthographic camera.
template <typename T>
LayerT<T> render_circle2d(const std::array<T, 2>& center, T radius,
                          const std::array<T, 3>& color, const Camera& cam,
                          const RenderSettings& settings) {
  ObjectParams<T> o;
  o.center = {center[0], center[1], T(0.0)};
  o.radius = radius;
  o.rgb = color;
  o.elevation = T(1.0);
  return render_layer(o, Primitive::circle2d, cam, settings);
}

/// Lambert-shaded sphere with an ambient floor.
template <typename T>
LayerT<T> render_sphere(const std::array<T, 3>& center, T radius,
                        const std::array<T, 3>& color, T azimuth, T elevation,
                        const Camera& cam, const RenderSettings& settings) {
  ObjectParams<T> o{center, radius, color, azimuth, elevation};
  return render_layer(o, Primitive::sphere, cam, settings);
}

/// Back-to-front order: decreasing depth, ties by index.
std::vector<std::size_t> back_to_front(const std::vector<double>& depths, bool sort);

/// Composites layers over a solid background with conf * alpha as opacity.
/// Returns HWC values.
template <typename T>
std::vector<T> composite(const std::vector<LayerT<T>>& layers,
                         const std::vector<T>& confidences,
                         const std::array<double, 3>& background, std::size_t size,
                         bool depth_sort = true) {
  if (layers.size() != confidences.size()) {
    throw ShapeMismatch("composite got " + std::to_string(layers.size()) + " layers and " +
                        std::to_string(confidences.size()) + " confidences");
  }
  std::vector<double> depths;
  for (const auto& l : layers) {
    if (l.size != size) throw ShapeMismatch("layer size differs from the image size");
    depths.push_back(l.depth);
  }
  std::vector<T> out(size * size * 3);
  for (std::size_t i = 0; i < size * size; ++i) {
    for (int c = 0; c < 3; ++c) out[i * 3 + c] = T(background[c]);
  }
  for (std::size_t idx : back_to_front(depths, depth_sort)) {
    const LayerT<T>& l = layers[idx];
    for (std::size_t i = 0; i < size * size; ++i) {
      const T a = confidences[idx] * l.alpha[i];
      for (int c = 0; c < 3; ++c) {
        out[i * 3 + c] = a * l.rgb[i * 3 + c] + (1.0 - a) * out[i * 3 + c];
      }
    }
  }
  return out;
}

Image composite_image(const std::vector<Layer>& layers, const std::vector<double>& confidences,
                      const std::array<double, 3>& background, std::size_t size,
                      bool depth_sort = true);

/// Object parameters as the world renders them: disabled groups fall back to
/// the world's fixed values.
ObjectParams<double> object_params(const SceneObject& o, const Light& light,
                                   const worlds::WorldSpec& world);

/// Renders every object of `s` and composites them. Worlds with a known
/// object count always use confidence 1.
Image render_scene(const SceneCode& s, const worlds::WorldSpec& world, const Camera& cam,
                   const RenderSettings& settings = {});

/// Predicted groups for a batch. Invalid Vars fall back to world defaults.
struct SceneVars {
  Var center;      // [B,n,dims]
  Var rgb;         // [B,n,3]
  Var confidence;  // [B,n]
  Var light;       // [B,2]
};

/// Differentiable render of a batch of scene codes to [B,3,S,S]. The
/// backward pass recomputes per-pixel forward-mode derivatives.
Var render_batch(const SceneVars& vars, const worlds::WorldSpec& world, const Camera& cam,
                 const RenderSettings& settings = {});

}  // namespace curio::render
