#include "curio/worlds/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "curio/errors.hpp"
#include "curio/render/renderer.hpp"

namespace curio::worlds {

using json = nlohmann::json;

SceneCode sample_scene(const WorldSpec& spec, std::mt19937_64& rng) {
  auto uniform = [&](const Range& r) {
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
  };
  const std::size_t n =
      std::uniform_int_distribution<std::size_t>(spec.min_objects, spec.max_objects)(rng);
  SceneCode s;
  s.objects.resize(n);
  const double min_dist2 = 4.0 * spec.radius * spec.radius;
  bool placed = false;
  for (int attempt = 0; attempt < kMaxRejections && !placed; ++attempt) {
    for (SceneObject& o : s.objects) {
      for (std::size_t a = 0; a < 3; ++a) {
        o.center[a] = a < spec.dims ? uniform(spec.position[a]) : 0.0;
      }
    }
    placed = true;
    for (std::size_t i = 0; i < n && placed; ++i) {
      for (std::size_t j = i + 1; j < n && placed; ++j) {
        double d2 = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
          const double d = s.objects[i].center[a] - s.objects[j].center[a];
          d2 += d * d;
        }
        placed = d2 > min_dist2;
      }
    }
  }
  if (!placed) {
    throw RejectionExhausted("no non-intersecting placement of " + std::to_string(n) +
                             " objects in " + std::to_string(kMaxRejections) + " attempts");
  }
  for (SceneObject& o : s.objects) {
    if (spec.groups.has(Group::color)) {
      for (double& c : o.rgb) c = uniform(spec.color);
    } else {
      o.rgb = spec.fixed_color;
    }
    if (spec.groups.has(Group::rotation)) {
      const double a = uniform(spec.rotation);
      o.rotation = {std::cos(a), std::sin(a)};
    }
    o.confidence = 1.0;
  }
  if (spec.groups.has(Group::light)) {
    s.light.azimuth = uniform(spec.azimuth);
    // Uniform over the spherical band: sin(elevation) is uniform.
    const double z = uniform({std::sin(spec.elevation.lo), std::sin(spec.elevation.hi)});
    s.light.elevation = std::asin(z);
  } else {
    s.light = spec.fixed_light;
  }
  return s;
}

std::mt19937_64 scene_rng(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32)};
  return std::mt19937_64(seq);
}

Split make_split(std::size_t n_total) {
  if (n_total < 3) throw InvalidConfig("a dataset needs at least 3 scenes");
  Split s;
  s.val = n_total / 4;
  s.test = n_total / 4;
  if (s.val == 0) s.val = s.test = 1;
  s.train = n_total - s.val - s.test;
  return s;
}

Dataset::Dataset(WorldSpec w, std::uint64_t s, Split sp, std::vector<render::Image> imgs,
                 std::vector<SceneCode> labels, bool labels_visible)
    : world(std::move(w)),
      seed(s),
      split(sp),
      images(std::move(imgs)),
      labels_(std::move(labels)),
      labels_visible_(labels_visible) {}

const std::vector<SceneCode>& Dataset::labels() const {
  if (!labels_visible_) {
    throw CapabilityError("labels are hidden from this dataset handle");
  }
  if (labels_.size() != images.size()) {
    throw CapabilityError("this dataset was loaded without labels");
  }
  return labels_;
}

const SceneCode& Dataset::label(std::size_t i) const { return labels().at(i); }

Dataset generate_dataset(const WorldSpec& spec, std::size_t n_total, std::uint64_t seed,
                         std::size_t workers) {
  spec.validate();
  const Split split = make_split(n_total);
  std::vector<render::Image> images(n_total);
  std::vector<SceneCode> labels(n_total);
  workers = std::max<std::size_t>(1, std::min(workers, n_total));

  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < n_total; i += workers) {
        std::mt19937_64 rng = scene_rng(seed, i);
        labels[i] = sample_scene(spec, rng);
        images[i] = render::render_scene(labels[i], spec, spec.camera);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return Dataset(spec, seed, split, std::move(images), std::move(labels));
}

std::string scene_to_json(const SceneCode& s) {
  json centers = json::array(), colors = json::array(), rotations = json::array(),
       confidences = json::array();
  for (const SceneObject& o : s.objects) {
    centers.push_back({o.center[0], o.center[1], o.center[2]});
    colors.push_back({o.rgb[0], o.rgb[1], o.rgb[2]});
    rotations.push_back({o.rotation[0], o.rotation[1]});
    confidences.push_back(o.confidence);
  }
  json j = {{"centers", centers},
            {"colors", colors},
            {"rotations", rotations},
            {"confidences", confidences},
            {"light", {s.light.azimuth, s.light.elevation}}};
  return j.dump();
}

namespace {

template <std::size_t N>
std::array<double, N> fixed_array(const json& j, const char* what, std::size_t min_len = N) {
  if (!j.is_array() || j.size() < min_len || j.size() > N) {
    throw InvalidConfig(std::string("scene field '") + what + "' has the wrong length");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < j.size(); ++i) out[i] = j[i].get<double>();
  return out;
}

}  // namespace

SceneCode scene_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidConfig(std::string("malformed scene JSON: ") + e.what());
  }
  try {
    if (!j.is_object()) throw InvalidConfig("scene JSON must be an object");
    SceneCode s;
    const json& centers = j.at("centers");
    if (!centers.is_array()) throw InvalidConfig("scene field 'centers' must be an array");
    s.objects.resize(centers.size());
    for (std::size_t i = 0; i < centers.size(); ++i) {
      s.objects[i].center = fixed_array<3>(centers[i], "centers", 2);
    }
    auto per_object = [&](const char* key, auto apply) {
      if (!j.contains(key)) return;
      const json& arr = j.at(key);
      if (!arr.is_array() || arr.size() != s.objects.size()) {
        throw InvalidConfig(std::string("scene field '") + key + "' needs one entry per object");
      }
      for (std::size_t i = 0; i < arr.size(); ++i) apply(s.objects[i], arr[i]);
    };
    per_object("colors", [](SceneObject& o, const json& v) { o.rgb = fixed_array<3>(v, "colors"); });
    per_object("rotations",
               [](SceneObject& o, const json& v) { o.rotation = fixed_array<2>(v, "rotations"); });
    per_object("confidences",
               [](SceneObject& o, const json& v) { o.confidence = v.get<double>(); });
    if (j.contains("light")) {
      const auto l = fixed_array<2>(j.at("light"), "light");
      s.light = {l[0], l[1]};
    }
    return s;
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("bad scene JSON: ") + e.what());
  }
}

namespace {

constexpr char kImageMagic[8] = {'C', 'U', 'R', 'I', 'O', 'I', 'M', 'G'};

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw FormatError("images.bin header is truncated");
  return v;
}

std::string preview_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu.png", i);
  return buf;
}

std::map<std::string, std::string> read_meta(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::map<std::string, std::string> meta;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(path.filename().string() + " line " + std::to_string(lineno) +
                        " is not key=value");
    }
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

std::size_t meta_count(const std::map<std::string, std::string>& meta, const std::string& key) {
  const auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("meta.txt lacks '" + key + "'");
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw FormatError("meta.txt field '" + key + "' is not a count");
  }
}

}  // namespace

void save_dataset(const Dataset& d, const std::filesystem::path& dir, bool previews) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  {
    std::ofstream meta(dir / "meta.txt");
    meta << "format=curio-dataset-1\n";
    meta << "seed=" << d.seed << "\n";
    meta << "count=" << d.size() << "\n";
    meta << "train=" << d.split.train << "\nval=" << d.split.val << "\ntest=" << d.split.test
         << "\n";
    for (const auto& [k, v] : to_fields(d.world)) meta << "world." << k << "=" << v << "\n";
    if (!meta) throw IoError("cannot write " + (dir / "meta.txt").string());
  }
  {
    std::ofstream out(dir / "images.bin", std::ios::binary);
    out.write(kImageMagic, sizeof kImageMagic);
    const std::size_t h = d.size() ? d.images[0].height : 0;
    const std::size_t w = d.size() ? d.images[0].width : 0;
    write_u64(out, d.size());
    write_u64(out, h);
    write_u64(out, w);
    write_u64(out, 3);
    for (const auto& img : d.images) {
      if (img.height != h || img.width != w || img.channels != 3) {
        throw ShapeMismatch("dataset images differ in size");
      }
      out.write(reinterpret_cast<const char*>(img.data.data()),
                static_cast<std::streamsize>(img.data.size() * sizeof(double)));
    }
    if (!out) throw IoError("cannot write " + (dir / "images.bin").string());
  }
  if (d.has_labels()) {
    std::ofstream out(dir / "labels.jsonl");
    for (const SceneCode& s : d.labels()) out << scene_to_json(s) << "\n";
    if (!out) throw IoError("cannot write " + (dir / "labels.jsonl").string());
  }
  if (previews) {
    std::filesystem::create_directories(dir / "preview", ec);
    if (ec) throw IoError("cannot create preview directory: " + ec.message());
    for (std::size_t i = 0; i < d.size(); ++i) {
      render::write_png(dir / "preview" / preview_name(i), d.images[i]);
    }
  }
}

Dataset load_dataset(const std::filesystem::path& dir, bool with_labels) {
  if (!std::filesystem::is_directory(dir)) throw IoError("no dataset at " + dir.string());
  const auto meta = read_meta(dir / "meta.txt");
  if (meta.count("format") == 0 || meta.at("format") != "curio-dataset-1") {
    throw FormatError("meta.txt is not a curio dataset description");
  }
  std::map<std::string, std::string> world_fields;
  for (const auto& [k, v] : meta) {
    if (k.rfind("world.", 0) == 0) world_fields[k.substr(6)] = v;
  }
  WorldSpec world;
  try {
    world = from_fields(world_fields);
  } catch (const InvalidConfig& e) {
    throw FormatError(std::string("meta.txt world description: ") + e.what());
  }
  const std::size_t count = meta_count(meta, "count");
  Split split{meta_count(meta, "train"), meta_count(meta, "val"), meta_count(meta, "test")};
  if (split.total() != count) throw FormatError("meta.txt split sizes do not sum to count");
  const std::uint64_t seed = meta_count(meta, "seed");

  std::ifstream in(dir / "images.bin", std::ios::binary);
  if (!in) throw IoError("cannot read " + (dir / "images.bin").string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kImageMagic, 8) != 0) throw FormatError("images.bin bad magic");
  const std::uint64_t n = read_u64(in), h = read_u64(in), w = read_u64(in), c = read_u64(in);
  if (n != count || c != 3 || (n > 0 && (h != world.image_size() || w != world.image_size()))) {
    throw FormatError("images.bin header disagrees with meta.txt");
  }
  std::vector<render::Image> images;
  images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    render::Image img(h, w, 3);
    in.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size() * sizeof(double)));
    if (!in) throw FormatError("images.bin is truncated at image " + std::to_string(i),
                               static_cast<long>(i));
    images.push_back(std::move(img));
  }

  std::vector<SceneCode> labels;
  if (with_labels) {
    std::ifstream lin(dir / "labels.jsonl");
    if (!lin) throw IoError("cannot read " + (dir / "labels.jsonl").string());
    std::string line;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::getline(lin, line)) {
        throw FormatError("labels.jsonl ends before record " + std::to_string(i),
                          static_cast<long>(i));
      }
      try {
        labels.push_back(scene_from_json(line));
      } catch (const InvalidConfig& e) {
        throw FormatError("labels.jsonl record " + std::to_string(i) + ": " + e.what(),
                          static_cast<long>(i));
      }
    }
  }
  return Dataset(std::move(world), seed, split, std::move(images), std::move(labels),
                 with_labels);
}

}  // namespace curio::worlds
