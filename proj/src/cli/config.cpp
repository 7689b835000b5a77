#include "curio/cli/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "curio/errors.hpp"

namespace curio::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw InvalidConfig("'" + key + "' expects a number, got '" + v + "'");
  }
}

std::uint64_t to_count(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw InvalidConfig("'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw InvalidConfig("'" + key + "' is out of range: " + v);
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw InvalidConfig("'" + key + "' expects a boolean, got '" + v + "'");
}

}  // namespace

Sections parse_ini(const std::string& text) {
  Sections out;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  for (std::size_t line_no = 1; std::getline(in, raw); ++line_no) {
    std::string line = raw;
    if (const auto c = line.find_first_of("#;"); c != std::string::npos) line.resize(c);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw InvalidConfig("line " + std::to_string(line_no) + ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      out[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidConfig("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw InvalidConfig("line " + std::to_string(line_no) + ": empty key");
    out[section][key] = trim(line.substr(eq + 1));
  }
  return out;
}

Sections read_ini(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_ini(ss.str());
  } catch (const InvalidConfig& e) {
    throw InvalidConfig(path.string() + ": " + e.what());
  }
}

std::optional<worlds::WorldSpec> ExperimentConfig::world() const {
  if (world_fields.empty()) return std::nullopt;
  auto fields = world_fields;
  if (auto it = fields.find("image_size"); it != fields.end()) {
    fields["camera.image_size"] = it->second;
    fields["novel_camera.image_size"] = it->second;
    fields.erase(it);
  }
  worlds::WorldSpec w = worlds::from_fields(fields);
  w.validate();
  return w;
}

ExperimentConfig to_experiment(const Sections& s) {
  ExperimentConfig c;
  bool have_seed = false;
  for (const auto& [section, kv] : s) {
    if (!section.empty() && section != "world" && section != "network" && section != "train" &&
        section != "eval" && section != "paths") {
      throw InvalidConfig("unknown section [" + section + "]");
    }
    for (const auto& [key, v] : kv) {
      const std::string where = section.empty() ? key : section + "." + key;
      if (section.empty()) {
        if (key != "seed") throw InvalidConfig("unknown top-level key '" + key + "'");
        c.seed = to_count(where, v);
        have_seed = true;
      } else if (section == "world") {
        c.world_fields[key] = v;
      } else if (section == "network") {
        if (key == "width_scale") c.width_scale = to_double(where, v);
        else if (key == "latent_dim") c.latent_dim = to_count(where, v);
        else throw InvalidConfig("unknown key '" + where + "'");
      } else if (section == "train") {
        train::TrainConfig& t = c.train;
        if (key == "mode") t.mode = train::parse_mode(v);
        else if (key == "supervision_frac") t.supervision_frac = to_double(where, v);
        else if (key == "batch_size") t.batch_size = to_count(where, v);
        else if (key == "virtual_batch") t.virtual_batch = to_count(where, v);
        else if (key == "gen_lr") t.gen_lr = to_double(where, v);
        else if (key == "critic_lr") t.critic_lr = to_double(where, v);
        else if (key == "image_loss_weight") t.image_loss_weight = to_double(where, v);
        else if (key == "image_loss_reduction") t.image_loss_reduction = train::parse_reduction(v);
        else if (key == "critic_loss_weight") t.critic_loss_weight = to_double(where, v);
        else if (key == "grad_clip") t.grad_clip = to_double(where, v);
        else if (key == "beta1") t.beta1 = to_double(where, v);
        else if (key == "beta2") t.beta2 = to_double(where, v);
        else if (key == "max_epochs") t.max_epochs = to_count(where, v);
        else if (key == "max_steps") t.max_steps = to_count(where, v);
        else if (key == "convergence_threshold") t.convergence_threshold = to_double(where, v);
        else if (key == "convergence_window") t.convergence_window = to_count(where, v);
        else if (key == "val_images") t.val_images = to_count(where, v);
        else if (key == "checkpoint_every") t.checkpoint_every = to_count(where, v);
        else if (key == "freeze_norm") t.freeze_norm = to_bool(where, v);
        else if (key == "blur") t.blur = to_bool(where, v);
        else if (key == "blur_sigma") t.blur_sigma = to_double(where, v);
        else throw InvalidConfig("unknown key '" + where + "'");
      } else if (section == "eval") {
        if (key == "confidence_threshold") {
          c.eval.confidence_threshold = to_double(where, v);
        } else if (key == "softness") {
          c.eval.settings.softness = to_double(where, v);
        } else if (key.rfind("weights.", 0) == 0) {
          c.eval.weights[parse_group(key.substr(8))] = to_double(where, v);
        } else {
          throw InvalidConfig("unknown key '" + where + "'");
        }
      } else if (section == "paths") {
        if (key == "dataset") c.dataset = v;
        else if (key == "out") c.out = v;
        else throw InvalidConfig("unknown key '" + where + "'");
      }
    }
  }
  if (!have_seed) throw InvalidConfig("config must set a top-level seed");
  c.train.seed = c.seed;
  c.train.weights = c.eval.weights;
  c.train.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  return to_experiment(read_ini(path));
}

std::string to_text(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "seed = " << c.seed << "\n";
  if (!c.world_fields.empty()) {
    o << "\n[world]\n";
    for (const auto& [k, v] : c.world_fields) o << k << " = " << v << "\n";
  }
  o << "\n[network]\nwidth_scale = " << fmt(c.width_scale) << "\nlatent_dim = " << c.latent_dim
    << "\n";
  const train::TrainConfig& t = c.train;
  o << "\n[train]\nmode = " << train::mode_name(t.mode)
    << "\nsupervision_frac = " << fmt(t.supervision_frac) << "\nbatch_size = " << t.batch_size
    << "\nvirtual_batch = " << t.virtual_batch << "\ngen_lr = " << fmt(t.gen_lr)
    << "\ncritic_lr = " << fmt(t.critic_lr) << "\nimage_loss_weight = " << fmt(t.image_loss_weight)
    << "\nimage_loss_reduction = " << train::reduction_name(t.image_loss_reduction)
    << "\ncritic_loss_weight = " << fmt(t.critic_loss_weight) << "\ngrad_clip = " << fmt(t.grad_clip)
    << "\nbeta1 = " << fmt(t.beta1) << "\nbeta2 = " << fmt(t.beta2)
    << "\nmax_epochs = " << t.max_epochs << "\nmax_steps = " << t.max_steps
    << "\nconvergence_threshold = " << fmt(t.convergence_threshold)
    << "\nconvergence_window = " << t.convergence_window << "\nval_images = " << t.val_images
    << "\ncheckpoint_every = " << t.checkpoint_every
    << "\nfreeze_norm = " << (t.freeze_norm ? "true" : "false")
    << "\nblur = " << (t.blur ? "true" : "false") << "\nblur_sigma = " << fmt(t.blur_sigma) << "\n";
  o << "\n[eval]\nconfidence_threshold = " << fmt(c.eval.confidence_threshold)
    << "\nsoftness = " << fmt(c.eval.settings.softness) << "\n";
  for (Group g : kAllGroups) o << "weights." << group_name(g) << " = " << fmt(c.eval.weights[g]) << "\n";
  if (c.dataset || c.out) {
    o << "\n[paths]\n";
    if (c.dataset) o << "dataset = " << c.dataset->string() << "\n";
    if (c.out) o << "out = " << c.out->string() << "\n";
  }
  return o.str();
}

worlds::WorldSpec resolve_world(const std::string& name_or_path, std::size_t image_size) {
  if (std::filesystem::is_regular_file(name_or_path)) {
    const Sections s = read_ini(name_or_path);
    std::map<std::string, std::string> fields;
    for (const auto& [section, kv] : s) {
      if (!section.empty() && section != "world") {
        throw InvalidConfig(name_or_path + ": unexpected section [" + section + "]");
      }
      for (const auto& [k, v] : kv) fields[k] = v;
    }
    if (!fields.count("camera.image_size") && !fields.count("image_size")) {
      fields["camera.image_size"] = std::to_string(image_size);
      fields["novel_camera.image_size"] = std::to_string(image_size);
    }
    ExperimentConfig tmp;
    tmp.world_fields = fields;
    return *tmp.world();
  }
  worlds::WorldSpec w = worlds::by_name(name_or_path, image_size);
  w.validate();
  return w;
}

}  // namespace curio::cli
