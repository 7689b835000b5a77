#include "curio/nn/networks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "curio/errors.hpp"

namespace curio::nn {

void NetworkConfig::validate() const {
  if (image_size != 32 && image_size != 64 && image_size != 128) {
    throw InvalidConfig("image_size must be 32, 64 or 128, got " +
                        std::to_string(image_size));
  }
  if (!(width_scale > 0.0)) throw InvalidConfig("width_scale must be positive");
  if (latent_dim < 8) throw InvalidConfig("latent_dim must be at least 8");
  if (n_proposals < 1) throw InvalidConfig("n_proposals must be at least 1");
  if (spatial_dims != 2 && spatial_dims != 3) {
    throw InvalidConfig("spatial_dims must be 2 or 3");
  }
}

ConvTable encoder_convs(std::size_t image_size) {
  switch (image_size) {
    case 128:
      return {{{11, 4, 0}, {5, 2, 1}, {3, 2, 1}, {3, 2, 1}, {3, 2, 0}}};
    case 64:
      return {{{5, 2, 0}, {5, 2, 1}, {3, 2, 1}, {3, 2, 1}, {3, 2, 0}}};
    case 32:
      return {{{3, 2, 0}, {3, 2, 0}, {3, 2, 1}, {3, 2, 1}, {3, 2, 1}}};
    default:
      throw InvalidConfig("no encoder layout for image_size " +
                          std::to_string(image_size));
  }
}

ConvTable critic_convs(std::size_t image_size) {
  switch (image_size) {
    case 128:
      return {{{14, 4, 1}, {4, 4, 0}, {3, 2, 1}, {2, 2, 0}, {6, 2, 2}}};
    case 64:
      return {{{6, 2, 0}, {4, 4, 0}, {3, 2, 1}, {2, 2, 0}, {2, 2, 0}}};
    case 32:
      return {{{4, 2, 0}, {3, 2, 0}, {3, 2, 1}, {2, 2, 0}, {2, 2, 0}}};
    default:
      throw InvalidConfig("no critic layout for image_size " +
                          std::to_string(image_size));
  }
}

std::size_t scaled_channels(std::size_t base, double width_scale) {
  const auto c = static_cast<std::size_t>(
      std::ceil(static_cast<double>(base) * width_scale - 1e-9));
  return std::max<std::size_t>(8, c);
}

namespace {
constexpr std::array<std::size_t, 5> kEncoderBase = {64, 192, 384, 256, 64};
constexpr std::array<std::size_t, 5> kCriticBase = {64, 192, 384, 256, 64};
}  // namespace

std::array<std::size_t, 5> encoder_channels(const NetworkConfig& cfg) {
  std::array<std::size_t, 5> ch{};
  for (std::size_t i = 0; i < 4; ++i) ch[i] = scaled_channels(kEncoderBase[i], cfg.width_scale);
  ch[4] = cfg.latent_dim;
  return ch;
}

std::array<std::size_t, 5> critic_channels(const NetworkConfig& cfg) {
  std::array<std::size_t, 5> ch{};
  for (std::size_t i = 0; i < 5; ++i) ch[i] = scaled_channels(kCriticBase[i], cfg.width_scale);
  return ch;
}

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

ConvStack::ConvStack(ParameterStore& store, const std::string& prefix,
                     std::size_t in_channels,
                     const std::array<std::size_t, 5>& channels,
                     const ConvTable& convs, std::mt19937_64& rng) {
  std::size_t cin = in_channels;
  for (std::size_t i = 0; i < 5; ++i) {
    const std::string name = prefix + ".conv" + std::to_string(i + 1);
    const std::size_t k = convs[i].kernel;
    const std::size_t cout = channels[i];
    Layer layer{};
    layer.conv = convs[i];
    layer.channels = cout;
    layer.weight = &store.add(name + ".w", kaiming_uniform({cout, cin, k, k}, cin * k * k, rng));
    layer.bias = &store.add(name + ".b", Tensor({cout}));
    layer.gamma = &store.add(name + ".bn.gamma", Tensor({cout}, 1.0));
    layer.beta = &store.add(name + ".bn.beta", Tensor({cout}));
    layer.stats.mean = &store.add(name + ".bn.mean", Tensor({cout}), false);
    layer.stats.var = &store.add(name + ".bn.var", Tensor({cout}, 1.0), false);
    layers_.push_back(layer);
    cin = cout;
  }
}

Var ConvStack::forward(Tape& tape, Var x, bool training, Activation hidden,
                       Activation last) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    x = conv2d(x, tape.parameter(*l.weight), l.conv.stride, l.conv.pad);
    x = bias_add(x, tape.parameter(*l.bias));
    x = batch_norm(x, tape.parameter(*l.gamma), tape.parameter(*l.beta), l.stats,
                   training);
    x = activation(i + 1 == layers_.size() ? last : hidden, x);
  }
  return x;
}

std::vector<Shape> ConvStack::layer_shapes(std::size_t image_size) const {
  std::vector<Shape> shapes;
  std::size_t s = image_size;
  for (const Layer& l : layers_) {
    s = conv_output_size(s, l.conv.kernel, l.conv.stride, l.conv.pad);
    shapes.push_back({l.channels, s, s});
  }
  return shapes;
}

Encoder::Encoder(const NetworkConfig& cfg, ParameterStore& store,
                 std::mt19937_64& rng, const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  stack_ = ConvStack(store, prefix, 3, encoder_channels(cfg_),
                     encoder_convs(cfg_.image_size), rng);
}

Var Encoder::forward(Tape& tape, Var images, bool training) const {
  const Shape s = images.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != cfg_.image_size || s[3] != cfg_.image_size) {
    throw ShapeMismatch("encoder expects [B,3," + std::to_string(cfg_.image_size) + "," +
                        std::to_string(cfg_.image_size) + "], got " + shape_string(s));
  }
  Var z = stack_.forward(tape, images, training, Activation::relu, Activation::relu);
  return reshape(z, {s[0], cfg_.latent_dim});
}

std::vector<Shape> Encoder::layer_shapes() const {
  return stack_.layer_shapes(cfg_.image_size);
}

Critic::Critic(const NetworkConfig& cfg, ParameterStore& store, std::mt19937_64& rng,
               const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  stack_ = ConvStack(store, prefix, 3, critic_channels(cfg_),
                     critic_convs(cfg_.image_size), rng);
  out_bias_ = &store.add(prefix + ".out.b", Tensor({1}));
}

Var Critic::forward(Tape& tape, Var images, bool training) const {
  const Shape s = images.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != cfg_.image_size || s[3] != cfg_.image_size) {
    throw ShapeMismatch("critic expects [B,3," + std::to_string(cfg_.image_size) + "," +
                        std::to_string(cfg_.image_size) + "], got " + shape_string(s));
  }
  Var f = stack_.forward(tape, images, training, Activation::leaky_relu,
                         Activation::linear);
  Var logit = add(mean_per_sample(f), tape.parameter(*out_bias_));
  return activation(Activation::sigmoid, logit);
}

std::vector<Shape> Critic::layer_shapes() const {
  return stack_.layer_shapes(cfg_.image_size);
}

Heads::Dense Heads::dense(ParameterStore& store, const std::string& name,
                          std::size_t in, std::size_t out, std::mt19937_64& rng) {
  Dense d{};
  d.weight = &store.add(name + ".w", kaiming_uniform({in, out}, in, rng));
  d.bias = &store.add(name + ".b", Tensor({out}));
  return d;
}

namespace {

std::size_t group_width(Group g, const NetworkConfig& cfg) {
  switch (g) {
    case Group::position: return cfg.spatial_dims;
    case Group::rotation: return 2;
    case Group::color: return 3;
    case Group::confidence: return 1;
    case Group::light: return 2;
  }
  return 0;
}

}  // namespace

Heads::Heads(const NetworkConfig& cfg, ParameterStore& store, std::mt19937_64& rng,
             const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t f = kHeadFeatures;
  const std::size_t n = cfg_.n_proposals;
  trunk_ = dense(store, prefix + ".trunk", cfg_.latent_dim, f, rng);
  auto make_branch = [&](Group g, const std::string& name) {
    Branch b{};
    b.expand = dense(store, prefix + "." + name + ".expand", f, n * f, rng);
    b.out = dense(store, prefix + "." + name + ".out", f, group_width(g, cfg_), rng);
    return b;
  };
  if (cfg_.heads.has(Group::position)) center_ = make_branch(Group::position, "center");
  if (cfg_.heads.has(Group::rotation)) rotation_ = make_branch(Group::rotation, "rotation");
  if (cfg_.heads.has(Group::color)) rgb_ = make_branch(Group::color, "rgb");
  if (cfg_.heads.has(Group::confidence)) {
    confidence_ = make_branch(Group::confidence, "confidence");
  }
  if (cfg_.heads.has(Group::light)) {
    light_hidden_ = dense(store, prefix + ".light.hidden", f, f, rng);
    light_out_ = dense(store, prefix + ".light.out", f, 2, rng);
    light_out_.bias->value[1] = std::numbers::pi / 4;
  }
}

Var Heads::apply(Tape& tape, const Dense& d, Var x) const {
  return linear(x, tape.parameter(*d.weight), tape.parameter(*d.bias));
}

Var Heads::branch(Tape& tape, const Branch& b, Var trunk, std::size_t width) const {
  const std::size_t batch = trunk.dim(0);
  const std::size_t n = cfg_.n_proposals;
  Var h = activation(Activation::relu, apply(tape, b.expand, trunk));
  h = reshape(h, {batch * n, kHeadFeatures});
  Var out = apply(tape, b.out, h);
  return reshape(out, {batch, n, width});
}

namespace {

// Column 0 passes through; column 1 is clamped to [kMinElevation, pi/2].
Var map_light(Var raw) {
  const Tensor& x = raw.value();
  const double hi = std::numbers::pi / 2;
  Tensor out = x;
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    out[2 * b + 1] = std::clamp(x[2 * b + 1], kMinElevation, hi);
  }
  return raw.tape().record("light_map", std::move(out), {raw}, [hi](BackwardContext& c) {
    Tensor& g = c.grad(0);
    const Tensor& in = c.input(0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const bool pass = i % 2 == 0 || (in[i] > kMinElevation && in[i] < hi);
      if (pass) g[i] += c.grad_out()[i];
    }
  });
}

}  // namespace

HeadOutputs Heads::forward(Tape& tape, Var latent) const {
  const Shape s = latent.shape();
  if (s.size() != 2 || s[1] != cfg_.latent_dim) {
    throw ShapeMismatch("heads expect [B," + std::to_string(cfg_.latent_dim) + "], got " +
                        shape_string(s));
  }
  Var trunk = activation(Activation::relu, apply(tape, trunk_, latent));
  HeadOutputs out;
  const std::size_t batch = s[0];
  const std::size_t n = cfg_.n_proposals;
  if (cfg_.heads.has(Group::position)) {
    out.center = branch(tape, center_, trunk, cfg_.spatial_dims);
  }
  if (cfg_.heads.has(Group::rotation)) {
    out.rotation = activation(Activation::tanh, branch(tape, rotation_, trunk, 2));
  }
  if (cfg_.heads.has(Group::color)) {
    out.rgb = activation(Activation::sigmoid, branch(tape, rgb_, trunk, 3));
  }
  if (cfg_.heads.has(Group::confidence)) {
    out.confidence = reshape(
        activation(Activation::sigmoid, branch(tape, confidence_, trunk, 1)), {batch, n});
  }
  if (cfg_.heads.has(Group::light)) {
    Var h = activation(Activation::relu, apply(tape, light_hidden_, trunk));
    out.light = map_light(apply(tape, light_out_, h));
  }
  return out;
}

std::vector<SceneCode> decode(const HeadOutputs& out, const NetworkConfig& cfg) {
  std::size_t batch = 0;
  for (const Var* v : {&out.center, &out.rotation, &out.rgb, &out.confidence, &out.light}) {
    if (v->valid()) batch = v->dim(0);
  }
  const std::size_t n = cfg.n_proposals;
  std::vector<SceneCode> codes(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    SceneCode& code = codes[b];
    code.objects.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      SceneObject& o = code.objects[i];
      if (out.center.valid()) {
        const Tensor& c = out.center.value();
        for (std::size_t d = 0; d < cfg.spatial_dims; ++d) {
          o.center[d] = c[(b * n + i) * cfg.spatial_dims + d];
        }
      }
      if (out.rotation.valid()) {
        const Tensor& r = out.rotation.value();
        o.rotation = {r[(b * n + i) * 2], r[(b * n + i) * 2 + 1]};
      }
      if (out.rgb.valid()) {
        const Tensor& c = out.rgb.value();
        for (std::size_t d = 0; d < 3; ++d) o.rgb[d] = c[(b * n + i) * 3 + d];
      }
      if (out.confidence.valid()) o.confidence = out.confidence.value()[b * n + i];
    }
    if (out.light.valid()) {
      code.light.azimuth = wrap_angle(out.light.value()[2 * b]);
      code.light.elevation = out.light.value()[2 * b + 1];
    }
  }
  return codes;
}

std::size_t encoder_parameter_count(const NetworkConfig& cfg) {
  ParameterStore store;
  std::mt19937_64 rng(0);
  Encoder enc(cfg, store, rng);
  return store.trainable_count();
}

std::size_t critic_parameter_count(const NetworkConfig& cfg) {
  ParameterStore store;
  std::mt19937_64 rng(0);
  Critic critic(cfg, store, rng);
  return store.trainable_count();
}

std::size_t heads_parameter_count(const NetworkConfig& cfg) {
  ParameterStore store;
  std::mt19937_64 rng(0);
  Heads heads(cfg, store, rng);
  return store.trainable_count();
}

}  // namespace curio::nn
