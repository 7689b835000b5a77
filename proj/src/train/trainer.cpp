#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "curio/errors.hpp"
#include "curio/rng.hpp"
#include "curio/train/train.hpp"

namespace curio::train {

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::supervised: return "supervised";
    case Mode::noncur: return "noncur";
    case Mode::curious: return "curious";
  }
  return "?";
}

Mode parse_mode(const std::string& name) {
  if (name == "supervised") return Mode::supervised;
  if (name == "noncur") return Mode::noncur;
  if (name == "curious") return Mode::curious;
  throw InvalidConfig("unknown mode '" + name + "' (expected supervised, noncur or curious)");
}

std::string reduction_name(Reduction r) { return r == Reduction::sum ? "sum" : "mean"; }

Reduction parse_reduction(const std::string& name) {
  if (name == "mean") return Reduction::mean;
  if (name == "sum") return Reduction::sum;
  throw InvalidConfig("unknown image_loss_reduction '" + name + "' (expected mean or sum)");
}

void TrainConfig::validate() const {
  if (!(supervision_frac > 0.0 && supervision_frac <= 1.0)) {
    throw InvalidConfig("supervision_frac must be in (0, 1]");
  }
  if (batch_size == 0 || virtual_batch == 0) throw InvalidConfig("batch sizes must be positive");
  if (batch_size % virtual_batch != 0) {
    throw InvalidConfig("virtual_batch " + std::to_string(virtual_batch) +
                        " does not divide batch_size " + std::to_string(batch_size));
  }
  if (virtual_batch < 2 && !freeze_norm) {
    throw InvalidConfig("batch norm needs micro-batches of at least 2 images");
  }
  if (!(gen_lr > 0.0) || !(critic_lr > 0.0)) throw InvalidConfig("learning rates must be positive");
  if (!(image_loss_weight >= 0.0) || !(critic_loss_weight >= 0.0) || !(grad_clip >= 0.0)) {
    throw InvalidConfig("loss weights and grad_clip must be non-negative");
  }
  for (double w : weights.w) {
    if (!(w >= 0.0)) throw InvalidConfig("metric weights must be non-negative");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidConfig("Adam betas must be in [0, 1)");
  }
  if (max_epochs == 0) throw InvalidConfig("max_epochs must be positive");
  if (convergence_window == 0) throw InvalidConfig("convergence_window must be positive");
  if (val_images == 0) throw InvalidConfig("val_images must be positive");
  if (blur) gaussian_kernel(9, blur_sigma);
}

namespace {

std::vector<Tensor> snapshot_buffers(ParameterStore& store) {
  std::vector<Tensor> out;
  for (Parameter* p : store.all()) {
    if (!p->trainable) out.push_back(p->value);
  }
  return out;
}

void restore_buffers(ParameterStore& store, const std::vector<Tensor>& saved) {
  std::size_t i = 0;
  for (Parameter* p : store.all()) {
    if (!p->trainable) p->value = saved[i++];
  }
}

Tensor slice_batch(const Tensor& images, std::size_t begin, std::size_t count) {
  const Shape& s = images.shape();
  const std::size_t per = images.size() / s[0];
  Tensor t({count, s[1], s[2], s[3]});
  std::copy(images.storage().begin() + static_cast<long>(begin * per),
            images.storage().begin() + static_cast<long>((begin + count) * per),
            t.storage().begin());
  return t;
}

Var image_term(Var rendered, Var input, const TrainConfig& cfg) {
  if (!cfg.blur) return l2_image_loss(rendered, input);
  return l2_image_loss(gaussian_blur(rendered, 9, cfg.blur_sigma),
                       gaussian_blur(input, 9, cfg.blur_sigma));
}

}  // namespace

StepMetrics train_step(nn::Model& model, TrainState& state, const TrainConfig& cfg,
                       const worlds::WorldSpec& world, const Tensor& images,
                       const std::vector<SceneCode>* labels) {
  if (images.rank() != 4 || images.dim(0) != cfg.batch_size) {
    throw ShapeMismatch("train_step expects a batch of " + std::to_string(cfg.batch_size) +
                        " images, got " + shape_string(images.shape()));
  }
  if (cfg.mode == Mode::supervised && (!labels || labels->size() != cfg.batch_size)) {
    throw InvalidConfig("supervised steps need one label per image");
  }
  const bool curious = cfg.mode == Mode::curious;
  if (curious && !model.has_critic()) throw CapabilityError("curious mode needs a critic");
  const std::size_t v = cfg.virtual_batch;
  const std::size_t micro = cfg.batch_size / v;
  const double share = static_cast<double>(v) / static_cast<double>(cfg.batch_size);
  const bool bn_training = !cfg.freeze_norm;
  const render::Camera& cam = world.camera;
  StepMetrics m;

  if (curious) {
    ParameterStore& cs = model.critic_params();
    cs.zero_grad();
    for (std::size_t k = 0; k < micro; ++k) {
      const Tensor real = slice_batch(images, k * v, v);
      // The generator pass below is the one that moves its batch-norm
      // statistics; this one must leave them alone.
      const std::vector<Tensor> saved = snapshot_buffers(model.generator_params());
      Tensor fake;
      {
        Tape t(false);
        const nn::HeadOutputs out = model.forward(t, t.constant(real), bn_training);
        fake = render::render_batch(nn::scene_vars(out), world, cam).value();
      }
      restore_buffers(model.generator_params(), saved);
      Tape tape;
      const Var joint = concat_rows(tape.constant(real), tape.constant(std::move(fake)));
      const Var p = model.critic().forward(tape, joint, bn_training);
      const Var d = add(bce(slice_rows(p, 0, v), 1.0), bce(slice_rows(p, v, v), 0.0));
      m.d_loss += share * d.value()[0];
      tape.backward(scale(d, share));
    }
    const std::vector<Parameter*> params = cs.trainable();
    adam_step(params, state.critic_adam, {cfg.critic_lr, cfg.beta1, cfg.beta2, 1e-8});
  }

  ParameterStore& gs = model.generator_params();
  gs.zero_grad();
  for (std::size_t k = 0; k < micro; ++k) {
    Tape tape;
    const Var real = tape.constant(slice_batch(images, k * v, v));
    const nn::HeadOutputs out = model.forward(tape, real, bn_training);
    Var loss;
    if (cfg.mode == Mode::supervised) {
      const std::vector<SceneCode> part(labels->begin() + static_cast<long>(k * v),
                                        labels->begin() + static_cast<long>((k + 1) * v));
      loss = supervised_loss(out, part, model.config(), cfg.weights, world);
      m.sup_loss += share * loss.value()[0];
    } else {
      const Var fake = render::render_batch(nn::scene_vars(out), world, cam);
      const Var mse = image_term(fake, real, cfg);
      m.image_mse += share * mse.value()[0];
      const double per_image =
          cfg.image_loss_reduction == Reduction::sum
              ? static_cast<double>(real.value().size() / real.value().dim(0))
              : 1.0;
      loss = scale(mse, cfg.image_loss_weight * per_image);
      if (curious) {
        const Var p = model.critic().forward(tape, concat_rows(real, fake), bn_training);
        const Var g = bce(slice_rows(p, v, v), 1.0);
        m.g_loss += share * g.value()[0];
        loss = add(loss, scale(g, cfg.critic_loss_weight));
      }
    }
    tape.backward(scale(loss, share));
  }
  const std::vector<Parameter*> params = gs.trainable();
  for (const Parameter* p : params) {
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in " + p->name);
  }
  m.grad_norm = cfg.grad_clip > 0.0 ? clip_grad_l2(params, cfg.grad_clip) : grad_l2_norm(params);
  adam_step(params, state.gen_adam, {cfg.gen_lr, cfg.beta1, cfg.beta2, 1e-8});
  if (curious) model.critic_params().zero_grad();  // generator pass leaked into the critic
  ++state.step;
  return m;
}

std::string log_header() { return "epoch,split,image_mse,d_loss,g_loss,eq1_error"; }

std::string format_log_row(const LogRow& r) {
  auto num = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  return std::to_string(r.epoch) + "," + r.split + "," + num(r.image_mse) + "," + num(r.d_loss) +
         "," + num(r.g_loss) + "," + num(r.eq1_error);
}

std::vector<std::size_t> supervised_subset(std::size_t n_train, double frac, std::uint64_t seed) {
  if (n_train == 0) throw InvalidConfig("no training images");
  if (!(frac > 0.0 && frac <= 1.0)) throw InvalidConfig("supervision_frac must be in (0, 1]");
  std::vector<std::size_t> idx(n_train);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng = seeded_rng(seed, {3});
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(frac * static_cast<double>(n_train))));
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// ---- checkpoints -----------------------------------------------------------

namespace {

void write_block(const std::filesystem::path& path, const ParameterStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::vector<const Parameter*> all = store.all();
  write_parameters(out, all);
}

void read_block(const std::filesystem::path& path, ParameterStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  assign_parameters(store, read_parameters(in));
}

void write_adam(const std::filesystem::path& path, const AdamState& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_adam_state(out, s);
}

AdamState read_adam(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return read_adam_state(in);
}

std::map<std::string, std::string> read_keyvals(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& need(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("checkpoint state lacks '" + key + "'");
  return it->second;
}

std::size_t to_size(const std::string& s) {
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw FormatError("bad integer '" + s + "' in checkpoint state");
  }
}

}  // namespace

void save_checkpoint(const nn::Model& model, const TrainState& state,
                     const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_block(dir / "generator.bin", model.generator_params());
  write_adam(dir / "generator_adam.bin", state.gen_adam);
  if (model.has_critic()) {
    write_block(dir / "critic.bin", model.critic_params());
    write_adam(dir / "critic_adam.bin", state.critic_adam);
  }
  const nn::NetworkConfig& net = model.config();
  std::ofstream out(dir / "state.txt");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", net.width_scale);
  out << "format=curio-checkpoint-1\n"
      << "epoch=" << state.epoch << "\nstep=" << state.step << "\ncritic=" << model.has_critic()
      << "\nnet.image_size=" << net.image_size << "\nnet.width_scale=" << buf
      << "\nnet.latent_dim=" << net.latent_dim << "\nnet.n_proposals=" << net.n_proposals
      << "\nnet.spatial_dims=" << net.spatial_dims << "\nnet.heads=";
  bool first = true;
  for (Group g : kAllGroups) {
    if (!net.heads.has(g)) continue;
    out << (first ? "" : ",") << group_name(g);
    first = false;
  }
  out << "\nval_history=";
  for (std::size_t i = 0; i < state.val_history.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", state.val_history[i]);
    out << (i ? "," : "") << buf;
  }
  out << "\n";
  if (!out) throw IoError("cannot write " + (dir / "state.txt").string());
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("no checkpoint at " + dir.string());
  const auto kv = read_keyvals(dir / "state.txt");
  if (need(kv, "format") != "curio-checkpoint-1") throw FormatError("unknown checkpoint format");
  CheckpointInfo info;
  info.epoch = to_size(need(kv, "epoch"));
  info.step = to_size(need(kv, "step"));
  info.critic = need(kv, "critic") == "1";
  info.net.image_size = to_size(need(kv, "net.image_size"));
  try {
    info.net.width_scale = std::stod(need(kv, "net.width_scale"));
  } catch (const std::invalid_argument&) {
    throw FormatError("bad width_scale in checkpoint state");
  }
  info.net.latent_dim = to_size(need(kv, "net.latent_dim"));
  info.net.n_proposals = to_size(need(kv, "net.n_proposals"));
  info.net.spatial_dims = to_size(need(kv, "net.spatial_dims"));
  info.net.heads = {};
  std::stringstream heads(need(kv, "net.heads"));
  std::string name;
  while (std::getline(heads, name, ',')) {
    if (!name.empty()) info.net.heads.insert(parse_group(name));
  }
  return info;
}

TrainState load_checkpoint(nn::Model& model, const std::filesystem::path& dir) {
  const CheckpointInfo info = read_checkpoint_info(dir);
  const auto kv = read_keyvals(dir / "state.txt");
  TrainState state;
  state.epoch = info.epoch;
  state.step = info.step;
  std::stringstream hist(need(kv, "val_history"));
  std::string item;
  while (std::getline(hist, item, ',')) {
    if (!item.empty()) state.val_history.push_back(std::stod(item));
  }
  read_block(dir / "generator.bin", model.generator_params());
  state.gen_adam = read_adam(dir / "generator_adam.bin");
  if (model.has_critic()) {
    if (!info.critic) throw FormatError("checkpoint has no critic to resume");
    read_block(dir / "critic.bin", model.critic_params());
    state.critic_adam = read_adam(dir / "critic_adam.bin");
  }
  return state;
}

// ---- loop --------------------------------------------------------------------

namespace {

double validation_mse(const nn::Model& model, const worlds::Dataset& data, std::size_t begin,
                      std::size_t count, std::vector<SceneCode>* codes) {
  double total = 0.0;
  constexpr std::size_t kChunk = 32;
  for (std::size_t off = 0; off < count; off += kChunk) {
    const std::size_t n = std::min(kChunk, count - off);
    Tape tape(false);
    const Var x = tape.constant(nn::stack_images(data.images, begin + off, n));
    const nn::HeadOutputs out = model.forward(tape, x, false);
    const Var fake = render::render_batch(nn::scene_vars(out), data.world, data.world.camera);
    total += l2_image_loss(fake, x).value()[0] * static_cast<double>(n);
    if (codes) {
      for (SceneCode& c : nn::decode(out, model.config())) codes->push_back(std::move(c));
    }
  }
  return total / static_cast<double>(count);
}

double mean_param_error(const std::vector<SceneCode>& pred, const std::vector<SceneCode>& gt,
                        const eval::MetricWeights& w, const worlds::WorldSpec& world) {
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    total += world.fixed_count()
                 ? eval::param_metric(pred[i], gt[i], w, world).total
                 : eval::matched_param_metric(eval::select_confident(pred[i]), gt[i], w, world).total;
  }
  return pred.empty() ? 0.0 : total / static_cast<double>(pred.size());
}

}  // namespace

TrainResult train(nn::Model& model, const worlds::Dataset& data, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  if (model.config().image_size != data.world.image_size()) {
    throw ShapeMismatch("model expects " + std::to_string(model.config().image_size) +
                        " px images, dataset has " + std::to_string(data.world.image_size()));
  }
  if (cfg.mode == Mode::curious && !model.has_critic()) {
    throw CapabilityError("curious mode needs a model built with a critic");
  }
  const worlds::WorldSpec& world = data.world;
  const std::size_t val_count = std::min(cfg.val_images, data.split.val);
  if (val_count == 0) throw InvalidConfig("dataset has no validation images");

  // Instrumentation labels are taken before the training view is built.
  std::vector<SceneCode> val_labels;
  if (data.labels_visible() && data.has_labels()) {
    for (std::size_t i = 0; i < val_count; ++i) {
      val_labels.push_back(data.label(data.split.val_begin() + i));
    }
  }
  worlds::Dataset view = data;
  if (cfg.mode != Mode::supervised) view.hide_labels();

  std::vector<std::size_t> pool;
  if (cfg.mode == Mode::supervised) {
    pool = supervised_subset(view.split.train, cfg.supervision_frac, cfg.seed);
  } else {
    pool.resize(view.split.train);
    std::iota(pool.begin(), pool.end(), 0);
  }
  if (pool.size() < cfg.batch_size) {
    throw InvalidConfig("only " + std::to_string(pool.size()) + " training images for a batch of " +
                        std::to_string(cfg.batch_size));
  }

  TrainState state;
  if (options.resume) state = load_checkpoint(model, *options.resume);

  std::ofstream log_file;
  if (options.out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*options.out_dir, ec);
    if (ec) throw IoError("cannot create " + options.out_dir->string() + ": " + ec.message());
    const auto path = *options.out_dir / "train_log.csv";
    const bool append = options.resume && std::filesystem::exists(path);
    log_file.open(path, append ? std::ios::app : std::ios::trunc);
    if (!log_file) throw IoError("cannot write " + path.string());
    if (!append) log_file << log_header() << "\n";
  }

  TrainResult result;
  if (!state.val_history.empty()) result.final_val_mse = state.val_history.back();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::size_t steps_per_epoch = pool.size() / cfg.batch_size;
  auto emit = [&](const LogRow& row) {
    result.log.push_back(row);
    if (log_file.is_open()) log_file << format_log_row(row) << "\n" << std::flush;
    if (options.on_epoch) options.on_epoch(row);
  };
  auto out_of_steps = [&] { return cfg.max_steps > 0 && state.step >= cfg.max_steps; };

  while (state.epoch < cfg.max_epochs && !out_of_steps()) {
    std::vector<std::size_t> order = pool;
    std::mt19937_64 rng = seeded_rng(cfg.seed, {2, state.epoch});
    std::shuffle(order.begin(), order.end(), rng);
    StepMetrics sum;
    std::size_t done = 0;
    for (std::size_t s = 0; s < steps_per_epoch && !out_of_steps(); ++s) {
      Tensor batch({cfg.batch_size, 3, world.image_size(), world.image_size()});
      std::vector<SceneCode> labels;
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        const std::size_t idx = order[s * cfg.batch_size + i];
        render::copy_to_batch(view.images[idx], batch, i);
        if (cfg.mode == Mode::supervised) labels.push_back(view.label(idx));
      }
      StepMetrics m;
      try {
        m = train_step(model, state, cfg, world, batch,
                       cfg.mode == Mode::supervised ? &labels : nullptr);
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(state.step + 1) + ": " + e.what());
      }
      sum.image_mse += m.image_mse;
      sum.d_loss += m.d_loss;
      sum.g_loss += m.g_loss;
      sum.sup_loss += m.sup_loss;
      ++done;
    }
    ++state.epoch;
    const double k = done ? 1.0 / static_cast<double>(done) : nan;
    const bool curious = cfg.mode == Mode::curious;
    const bool sup = cfg.mode == Mode::supervised;
    emit({state.epoch, "train", sup ? nan : sum.image_mse * k, curious ? sum.d_loss * k : nan,
          curious ? sum.g_loss * k : nan, sup ? sum.sup_loss * k : nan});

    std::vector<SceneCode> codes;
    const double val_mse = validation_mse(model, view, view.split.val_begin(), val_count,
                                          val_labels.empty() ? nullptr : &codes);
    const double eq1 = val_labels.empty() ? nan : mean_param_error(codes, val_labels, cfg.weights, world);
    emit({state.epoch, "val", val_mse, nan, nan, eq1});
    state.val_history.push_back(val_mse);
    result.final_val_mse = val_mse;

    const auto& h = state.val_history;
    if (h.size() > cfg.convergence_window) {
      const double before = h[h.size() - 1 - cfg.convergence_window];
      if (before - h.back() < cfg.convergence_threshold * before) result.converged = true;
    }
    const bool last = result.converged || state.epoch >= cfg.max_epochs || out_of_steps();
    if (options.out_dir && (last || (cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0))) {
      save_checkpoint(model, state, *options.out_dir / "checkpoint");
    }
    if (result.converged) break;
  }
  result.epochs = state.epoch;
  return result;
}

}  // namespace curio::train
