#include "curio/scene.hpp"

#include "curio/errors.hpp"

namespace curio {

std::string group_name(Group g) {
  switch (g) {
    case Group::position: return "position";
    case Group::color: return "color";
    case Group::rotation: return "rotation";
    case Group::confidence: return "confidence";
    case Group::light: return "light";
  }
  return "?";
}

Group parse_group(const std::string& name) {
  for (Group g : kAllGroups) {
    if (group_name(g) == name) return g;
  }
  throw InvalidConfig("unknown parameter group '" + name +
                      "' (expected position, color, rotation, confidence, light)");
}

}  // namespace curio
