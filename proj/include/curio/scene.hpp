#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace curio {

/// Parameter groups a world can enable and a network can predict.
enum class Group { position, color, rotation, confidence, light };

inline constexpr std::array<Group, 5> kAllGroups = {
    Group::position, Group::color, Group::rotation, Group::confidence, Group::light};

std::string group_name(Group g);
/// Throws InvalidConfig for unknown names.
Group parse_group(const std::string& name);

struct GroupSet {
  unsigned bits = 0;

  GroupSet() = default;
  GroupSet(std::initializer_list<Group> groups) {
    for (Group g : groups) insert(g);
  }
  bool has(Group g) const { return (bits >> static_cast<unsigned>(g)) & 1u; }
  void insert(Group g) { bits |= 1u << static_cast<unsigned>(g); }
  bool operator==(const GroupSet&) const = default;
};

struct SceneObject {
  /// World units; the z entry is unused (zero) in 2D worlds.
  std::array<double, 3> center{};
  std::array<double, 3> rgb{1.0, 1.0, 1.0};
  /// Direction pair (i, j); the angle is atan2(j, i).
  std::array<double, 2> rotation{1.0, 0.0};
  double confidence = 1.0;

  double angle() const { return std::atan2(rotation[1], rotation[0]); }
  bool operator==(const SceneObject&) const = default;
};

struct Light {
  double azimuth = 0.0;
  double elevation = std::numbers::pi / 4;

  /// Unit vector pointing from the scene toward the light; z is up out of
  /// the ground, toward the default camera.
  std::array<double, 3> direction() const {
    return {std::cos(elevation) * std::cos(azimuth),
            std::cos(elevation) * std::sin(azimuth), std::sin(elevation)};
  }
  bool operator==(const Light&) const = default;
};

/// Explicit scene parameters: per-object attributes plus the global light.
struct SceneCode {
  std::vector<SceneObject> objects;
  Light light;
  bool operator==(const SceneCode&) const = default;
};

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

}  // namespace curio
