#include "curio/worlds/spec.hpp"

#include <cctype>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <vector>

#include "curio/errors.hpp"

namespace curio::worlds {

namespace {

std::size_t group_dof(Group g, std::size_t dims) {
  switch (g) {
    case Group::position: return dims;
    case Group::color: return 3;
    case Group::rotation: return 1;
    case Group::confidence: return 1;
    case Group::light: return 2;
  }
  return 0;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_list(std::initializer_list<double> vs) {
  std::string out;
  for (double v : vs) {
    if (!out.empty()) out += ',';
    out += fmt(v);
  }
  return out;
}

std::vector<double> parse_list(const std::string& key, const std::string& text,
                               std::size_t expected) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidConfig("world field '" + key + "': '" + item + "' is not a number");
    }
  }
  if (out.size() != expected) {
    throw InvalidConfig("world field '" + key + "' needs " + std::to_string(expected) +
                        " comma-separated values");
  }
  return out;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
  const double v = parse_list(key, text, 1)[0];
  if (v < 0.0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
    throw InvalidConfig("world field '" + key + "' must be a non-negative integer");
  }
  return static_cast<std::size_t>(v);
}

void camera_fields(std::map<std::string, std::string>& f, const std::string& prefix,
                   const render::Camera& c) {
  f[prefix + ".fov_y"] = fmt(c.fov_y);
  f[prefix + ".image_size"] = std::to_string(c.image_size);
  f[prefix + ".position"] = fmt_list({c.position[0], c.position[1], c.position[2]});
  f[prefix + ".look_at"] = fmt_list({c.look_at[0], c.look_at[1], c.look_at[2]});
  f[prefix + ".up"] = fmt_list({c.up[0], c.up[1], c.up[2]});
  f[prefix + ".projection"] =
      c.projection == render::Projection::orthographic ? "orthographic" : "perspective";
  f[prefix + ".ortho_half_extent"] = fmt(c.ortho_half_extent);
}

bool apply_camera_field(render::Camera& c, const std::string& field, const std::string& key,
                        const std::string& value) {
  auto vec3 = [&](render::Vec3& dst) {
    const auto v = parse_list(key, value, 3);
    dst = {v[0], v[1], v[2]};
  };
  if (field == "fov_y") {
    c.fov_y = parse_list(key, value, 1)[0];
  } else if (field == "image_size") {
    c.image_size = parse_count(key, value);
  } else if (field == "position") {
    vec3(c.position);
  } else if (field == "look_at") {
    vec3(c.look_at);
  } else if (field == "up") {
    vec3(c.up);
  } else if (field == "projection") {
    if (value == "orthographic") {
      c.projection = render::Projection::orthographic;
    } else if (value == "perspective") {
      c.projection = render::Projection::perspective;
    } else {
      throw InvalidConfig("world field '" + key + "' must be perspective or orthographic");
    }
  } else if (field == "ortho_half_extent") {
    c.ortho_half_extent = parse_list(key, value, 1)[0];
  } else {
    return false;
  }
  return true;
}

render::Camera ortho_camera(std::size_t size) {
  render::Camera c;
  c.image_size = size;
  c.projection = render::Projection::orthographic;
  c.position = {0.0, 0.0, 10.0};
  return c;
}

}  // namespace

std::size_t WorldSpec::computed_dof() const {
  std::size_t n = 0;
  for (Group g : kAllGroups) {
    if (groups.has(g)) n += group_dof(g, dims);
  }
  return n;
}

void WorldSpec::validate() const {
  if (name.empty()) throw InvalidConfig("world needs a name");
  if (dims != 2 && dims != 3) throw InvalidConfig("world dims must be 2 or 3");
  if (!groups.has(Group::position)) throw InvalidConfig("world must enable the position group");
  if (min_objects < 1 || max_objects < min_objects) {
    throw InvalidConfig("world object count range must satisfy 1 <= min <= max");
  }
  if (dof != computed_dof()) {
    throw InvalidConfig("world '" + name + "' declares dof " + std::to_string(dof) +
                        " but its groups sum to " + std::to_string(computed_dof()));
  }
  if (!(radius > 0.0)) throw InvalidConfig("world radius must be positive");
  auto check = [](const Range& r, const char* what) {
    if (!(r.lo <= r.hi)) throw InvalidConfig(std::string("world range ") + what + " is empty");
  };
  check(position[0], "position.x");
  check(position[1], "position.y");
  check(position[2], "position.z");
  check(color, "color");
  check(rotation, "rotation");
  check(azimuth, "azimuth");
  check(elevation, "elevation");
  if (color.lo < 0.0 || color.hi > 1.0) throw InvalidConfig("world color range must lie in [0,1]");
  for (double b : background) {
    if (b < 0.0 || b > 1.0) throw InvalidConfig("world background must lie in [0,1]");
  }
  camera.validate();
  novel_camera.validate();
  if (novel_camera.image_size != camera.image_size) {
    throw InvalidConfig("novel camera must share the training image size");
  }
  if (dims == 2 && (camera.projection != render::Projection::orthographic ||
                    novel_camera.projection != render::Projection::orthographic)) {
    throw InvalidConfig("2D worlds are viewed orthographically");
  }
}

WorldSpec circles(std::size_t image_size) {
  WorldSpec w;
  w.name = "circles";
  w.dims = 2;
  w.dof = 2;
  w.min_objects = w.max_objects = 1;
  w.groups = {Group::position};
  w.position = {{{-2.0, 2.0}, {-2.0, 2.0}, {0.0, 0.0}}};
  w.radius = 0.5;
  w.fixed_color = {1.0, 0.0, 0.0};
  w.background = {0.0, 0.0, 0.0};
  w.camera = ortho_camera(image_size);
  // A flat world has no second viewpoint; the held-out view turns it a
  // quarter turn in the image plane.
  w.novel_camera = w.camera;
  w.novel_camera.up = {1.0, 0.0, 0.0};
  return w;
}

WorldSpec spheres(std::size_t image_size) {
  WorldSpec w;
  w.name = "spheres";
  w.dims = 3;
  w.dof = 6;
  w.min_objects = w.max_objects = 3;
  w.groups = {Group::position, Group::color};
  w.position = {{{-2.0, 2.0}, {-2.0, 2.0}, {-1.0, 1.0}}};
  w.radius = 0.5;
  w.background = {0.5, 0.5, 0.5};
  w.camera.image_size = image_size;
  w.novel_camera = w.camera;
  w.novel_camera.position = {0.0, -6.0, 8.0};
  return w;
}

WorldSpec varied(std::size_t image_size) {
  WorldSpec w = spheres(image_size);
  w.name = "varied";
  w.dof = 7;
  w.min_objects = 2;
  w.max_objects = 5;
  w.groups = {Group::position, Group::color, Group::confidence};
  return w;
}

WorldSpec by_name(const std::string& name, std::size_t image_size) {
  if (name == "circles") return circles(image_size);
  if (name == "spheres") return spheres(image_size);
  if (name == "varied") return varied(image_size);
  throw InvalidConfig("unknown world '" + name + "' (valid worlds: circles, spheres, varied)");
}

std::map<std::string, std::string> to_fields(const WorldSpec& w) {
  std::map<std::string, std::string> f;
  f["name"] = w.name;
  f["dims"] = std::to_string(w.dims);
  f["dof"] = std::to_string(w.dof);
  f["min_objects"] = std::to_string(w.min_objects);
  f["max_objects"] = std::to_string(w.max_objects);
  std::string groups;
  for (Group g : kAllGroups) {
    if (!w.groups.has(g)) continue;
    if (!groups.empty()) groups += ',';
    groups += group_name(g);
  }
  f["groups"] = groups;
  const char* axes[3] = {"x", "y", "z"};
  for (int a = 0; a < 3; ++a) {
    f[std::string("position.") + axes[a]] = fmt_list({w.position[a].lo, w.position[a].hi});
  }
  f["color"] = fmt_list({w.color.lo, w.color.hi});
  f["rotation"] = fmt_list({w.rotation.lo, w.rotation.hi});
  f["azimuth"] = fmt_list({w.azimuth.lo, w.azimuth.hi});
  f["elevation"] = fmt_list({w.elevation.lo, w.elevation.hi});
  f["radius"] = fmt(w.radius);
  f["fixed_color"] = fmt_list({w.fixed_color[0], w.fixed_color[1], w.fixed_color[2]});
  f["fixed_light"] = fmt_list({w.fixed_light.azimuth, w.fixed_light.elevation});
  f["background"] = fmt_list({w.background[0], w.background[1], w.background[2]});
  camera_fields(f, "camera", w.camera);
  camera_fields(f, "novel_camera", w.novel_camera);
  return f;
}

WorldSpec from_fields(const std::map<std::string, std::string>& fields) {
  std::string base = "circles";
  if (auto it = fields.find("base"); it != fields.end()) {
    base = it->second;
  } else if (auto n = fields.find("name"); n != fields.end()) {
    base = n->second;
  }
  std::size_t size = 64;
  if (auto it = fields.find("camera.image_size"); it != fields.end()) {
    size = parse_count(it->first, it->second);
  }
  WorldSpec w;
  try {
    w = by_name(base, size);
  } catch (const InvalidConfig&) {
    if (fields.count("base")) throw;
    w = circles(size);  // a custom name with no base starts from the 2D defaults
  }

  for (const auto& [key, value] : fields) {
    auto range = [&](Range& r) {
      const auto v = parse_list(key, value, 2);
      r = {v[0], v[1]};
    };
    if (key == "base") {
      continue;
    } else if (key == "name") {
      w.name = value;
    } else if (key == "dims") {
      w.dims = parse_count(key, value);
    } else if (key == "dof") {
      w.dof = parse_count(key, value);
    } else if (key == "min_objects") {
      w.min_objects = parse_count(key, value);
    } else if (key == "max_objects") {
      w.max_objects = parse_count(key, value);
    } else if (key == "groups") {
      w.groups = {};
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) w.groups.insert(parse_group(item));
    } else if (key == "position.x") {
      range(w.position[0]);
    } else if (key == "position.y") {
      range(w.position[1]);
    } else if (key == "position.z") {
      range(w.position[2]);
    } else if (key == "color") {
      range(w.color);
    } else if (key == "rotation") {
      range(w.rotation);
    } else if (key == "azimuth") {
      range(w.azimuth);
    } else if (key == "elevation") {
      range(w.elevation);
    } else if (key == "radius") {
      w.radius = parse_list(key, value, 1)[0];
    } else if (key == "fixed_color") {
      const auto v = parse_list(key, value, 3);
      w.fixed_color = {v[0], v[1], v[2]};
    } else if (key == "fixed_light") {
      const auto v = parse_list(key, value, 2);
      w.fixed_light = {v[0], v[1]};
    } else if (key == "background") {
      const auto v = parse_list(key, value, 3);
      w.background = {v[0], v[1], v[2]};
    } else if (key.rfind("camera.", 0) == 0 &&
               apply_camera_field(w.camera, key.substr(7), key, value)) {
    } else if (key.rfind("novel_camera.", 0) == 0 &&
               apply_camera_field(w.novel_camera, key.substr(13), key, value)) {
    } else {
      throw InvalidConfig("unknown world field '" + key + "'");
    }
  }
  w.validate();
  return w;
}

}  // namespace curio::worlds
