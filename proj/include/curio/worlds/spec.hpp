#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>

#include "curio/render/camera.hpp"
#include "curio/scene.hpp"

namespace curio::worlds {

struct Range {
  double lo = 0.0;
  double hi = 1.0;
  bool operator==(const Range&) const = default;
};

/// Declarative description of one synthetic task.
struct WorldSpec {
  std::string name;
  std::size_t dims = 2;
  std::size_t dof = 2;
  std::size_t min_objects = 1;
  std::size_t max_objects = 1;
  GroupSet groups{Group::position};

  /// Per-axis sampling intervals; z is ignored in 2D worlds.
  std::array<Range, 3> position{{{-2.0, 2.0}, {-2.0, 2.0}, {0.0, 0.0}}};
  Range color{0.2, 1.0};
  Range rotation{-3.141592653589793, 3.141592653589793};
  Range azimuth{-3.141592653589793, 3.141592653589793};
  Range elevation{0.5235987755982988, 1.5707963267948966};

  double radius = 0.5;
  /// Used when the color group is disabled.
  std::array<double, 3> fixed_color{1.0, 0.0, 0.0};
  /// Used when the light group is disabled.
  Light fixed_light{};
  std::array<double, 3> background{0.0, 0.0, 0.0};

  render::Camera camera;
  /// Held-out viewpoint for evaluation.
  render::Camera novel_camera;

  std::size_t image_size() const { return camera.image_size; }
  bool fixed_count() const { return min_objects == max_objects; }
  /// Per-object parameter dimensions plus global ones, from `groups`.
  std::size_t computed_dof() const;
  /// Throws InvalidConfig.
  void validate() const;
  bool operator==(const WorldSpec&) const = default;
};

/// The built-in worlds: "circles", "spheres", "varied".
WorldSpec circles(std::size_t image_size = 64);
WorldSpec spheres(std::size_t image_size = 64);
WorldSpec varied(std::size_t image_size = 64);

/// Throws InvalidConfig naming the valid worlds.
WorldSpec by_name(const std::string& name, std::size_t image_size = 64);

/// Flat key=value form used in meta.txt and spec files.
std::map<std::string, std::string> to_fields(const WorldSpec& spec);
/// Starts from the built-in world named by "name" (or "base") and applies
/// the remaining fields. Throws InvalidConfig on unknown keys or bad values.
WorldSpec from_fields(const std::map<std::string, std::string>& fields);

}  // namespace curio::worlds
