#include <algorithm>
#include <cmath>
#include <memory>

#include "curio/errors.hpp"
#include "curio/train/train.hpp"

namespace curio::train {

Var l2_image_loss(Var rendered, Var input) {
  if (rendered.shape() != input.shape()) {
    throw ShapeMismatch("image loss needs equal shapes, got " + shape_string(rendered.shape()) +
                        " and " + shape_string(input.shape()));
  }
  return mean(square(sub(rendered, input)));
}

double l2_image_loss(const render::Image& rendered, const render::Image& input) {
  if (rendered.height != input.height || rendered.width != input.width ||
      rendered.channels != input.channels) {
    throw ShapeMismatch("image loss needs equal shapes");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < rendered.data.size(); ++i) {
    const double d = rendered.data[i] - input.data[i];
    s += d * d;
  }
  return rendered.data.empty() ? 0.0 : s / static_cast<double>(rendered.data.size());
}

namespace {
// Keeps log() finite when a sigmoid saturates.
constexpr double kProbFloor = 1e-12;
}  // namespace

Var bce(Var probs, double target) {
  const Tensor& p = probs.value();
  if (p.empty()) throw ShapeMismatch("bce needs a nonempty batch");
  const double n = static_cast<double>(p.size());
  double loss = 0.0;
  for (double v : p.data()) {
    const double q = std::clamp(v, kProbFloor, 1.0 - kProbFloor);
    loss -= target * std::log(q) + (1.0 - target) * std::log(1.0 - q);
  }
  return probs.tape().record("bce", Tensor::scalar(loss / n), {probs},
                             [target, n](BackwardContext& ctx) {
                               const Tensor& p = ctx.input(0);
                               Tensor& g = ctx.grad(0);
                               const double go = ctx.grad_out()[0];
                               for (std::size_t i = 0; i < p.size(); ++i) {
                                 const double q = std::clamp(p[i], kProbFloor, 1.0 - kProbFloor);
                                 g[i] += go * (-target / q + (1.0 - target) / (1.0 - q)) / n;
                               }
                             });
}

CriticLosses critic_losses(const nn::Critic& critic, Tape& tape, Var real, Var fake,
                           bool training) {
  const std::size_t nr = real.dim(0), nf = fake.dim(0);
  if (nr == 0 || nf == 0) throw ShapeMismatch("critic losses need nonempty batches");
  CriticLosses out;
  const Var detached = tape.constant(fake.value());
  const Var pd = critic.forward(tape, concat_rows(real, detached), training);
  out.d_loss = add(bce(slice_rows(pd, 0, nr), 1.0), bce(slice_rows(pd, nr, nf), 0.0));
  const Var pg = critic.forward(tape, concat_rows(real, fake), training);
  out.g_loss = bce(slice_rows(pg, nr, nf), 1.0);
  return out;
}

double supervised_loss(const SceneCode& pred, const SceneCode& gt, const eval::MetricWeights& w,
                       const worlds::WorldSpec& world) {
  return eval::param_metric(pred, gt, w, world).total;
}

namespace {

std::vector<eval::Point> positions(const SceneCode& s) {
  std::vector<eval::Point> out;
  for (const SceneObject& o : s.objects) out.push_back(o.center);
  return out;
}

// Adds w * (a - b) / |a - b| into g and returns |a - b|.
template <std::size_t N>
double norm_grad(const std::array<double, N>& a, const std::array<double, N>& b, std::size_t dims,
                 double w, double* g) {
  double s = 0.0;
  for (std::size_t d = 0; d < dims; ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
  const double n = std::sqrt(s);
  if (n > 0.0 && g) {
    for (std::size_t d = 0; d < dims; ++d) g[d] += w * (a[d] - b[d]) / n;
  }
  return n;
}

struct Grads {
  Tensor center, rgb, rotation, confidence, light;
};

// Error of proposal i against ground-truth object o, accumulating gradients
// for that proposal. Confidence is scored against existence (1).
double object_term(const SceneObject& p, const SceneObject& o, std::size_t b, std::size_t i,
                   std::size_t n, const nn::NetworkConfig& net, const eval::MetricWeights& w,
                   const worlds::WorldSpec& world, Grads& g) {
  const std::size_t k = b * n + i;
  const std::size_t dims = net.spatial_dims;
  double e = w[Group::position] *
             norm_grad(p.center, o.center, dims, w[Group::position],
                       g.center.empty() ? nullptr : &g.center[k * dims]);
  if (world.groups.has(Group::color)) {
    e += w[Group::color] *
         norm_grad(p.rgb, o.rgb, 3, w[Group::color], g.rgb.empty() ? nullptr : &g.rgb[k * 3]);
  }
  if (world.groups.has(Group::rotation)) {
    const double diff = wrap_angle(p.angle() - o.angle());
    e += w[Group::rotation] * std::abs(diff);
    if (!g.rotation.empty() && diff != 0.0) {
      const double r2 = p.rotation[0] * p.rotation[0] + p.rotation[1] * p.rotation[1];
      if (r2 > 0.0) {
        const double s = w[Group::rotation] * (diff > 0.0 ? 1.0 : -1.0);
        g.rotation[k * 2] += s * -p.rotation[1] / r2;
        g.rotation[k * 2 + 1] += s * p.rotation[0] / r2;
      }
    }
  }
  if (world.groups.has(Group::confidence)) {
    const double diff = p.confidence - o.confidence;
    e += w[Group::confidence] * std::abs(diff);
    if (!g.confidence.empty() && diff != 0.0) {
      g.confidence[k] += w[Group::confidence] * (diff > 0.0 ? 1.0 : -1.0);
    }
  }
  return e;
}

double light_term(const Light& p, const Light& t, std::size_t b, const eval::MetricWeights& w,
                  Grads& g) {
  const auto dp = p.direction(), dt = t.direction();
  const double c = std::clamp(dp[0] * dt[0] + dp[1] * dt[1] + dp[2] * dt[2],
                              -1.0, 1.0);
  const double angle = std::acos(c);
  if (!g.light.empty() && std::abs(c) < 1.0 - 1e-12) {
    const double k = -w[Group::light] / std::sqrt(1.0 - c * c);
    const double ca = std::cos(p.azimuth), sa = std::sin(p.azimuth);
    const double ce = std::cos(p.elevation), se = std::sin(p.elevation);
    const double d_az = -ce * sa * dt[0] + ce * ca * dt[1];
    const double d_el = -se * ca * dt[0] - se * sa * dt[1] + ce * dt[2];
    g.light[2 * b] += k * d_az;
    g.light[2 * b + 1] += k * d_el;
  }
  return w[Group::light] * angle;
}

}  // namespace

Var supervised_loss(const nn::HeadOutputs& out, const std::vector<SceneCode>& gt,
                    const nn::NetworkConfig& net, const eval::MetricWeights& w,
                    const worlds::WorldSpec& world) {
  const std::vector<SceneCode> pred = nn::decode(out, net);
  if (pred.size() != gt.size()) {
    throw CountMismatch("supervised loss got " + std::to_string(pred.size()) +
                        " predictions for " + std::to_string(gt.size()) + " labels");
  }
  const std::size_t batch = pred.size(), n = net.n_proposals;
  std::vector<Var> inputs;
  Grads g;
  auto slot = [&](const Var& v, Tensor& t) {
    if (v.valid()) {
      t = Tensor::zeros_like(v.value());
      inputs.push_back(v);
    }
  };
  slot(out.center, g.center);
  slot(out.rgb, g.rgb);
  slot(out.rotation, g.rotation);
  slot(out.confidence, g.confidence);
  slot(out.light, g.light);
  if (inputs.empty()) throw InvalidConfig("supervised loss needs at least one head");

  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const SceneCode& p = pred[b];
    const SceneCode& t = gt[b];
    if (world.fixed_count()) {
      const eval::Permutation perm = eval::optimal_assignment(positions(p), positions(t));
      for (std::size_t i = 0; i < n; ++i) {
        object_term(p.objects[i], t.objects[perm[i]], b, i, n, net, w, world, g);
      }
      // The value is the evaluation metric itself; the terms above only
      // supply gradients.
      total += eval::param_metric(p, t, w, world).total;
    } else {
      if (t.objects.size() > n) {
        throw CountMismatch("scene has more objects than the network has proposals");
      }
      std::vector<bool> used(n, false);
      const eval::Permutation match =
          t.objects.empty() ? eval::Permutation{} : eval::partial_assignment(positions(t), positions(p));
      for (std::size_t j = 0; j < match.size(); ++j) {
        SceneObject target = t.objects[j];
        target.confidence = 1.0;
        total += object_term(p.objects[match[j]], target, b, match[j], n, net, w, world, g);
        used[match[j]] = true;
      }
      if (world.groups.has(Group::confidence)) {
        for (std::size_t i = 0; i < n; ++i) {
          if (used[i]) continue;
          total += w[Group::confidence] * p.objects[i].confidence;
          if (!g.confidence.empty()) g.confidence[b * n + i] += w[Group::confidence];
        }
      }
      if (world.groups.has(Group::light)) total += light_term(p.light, t.light, b, w, g);
      continue;
    }
    if (world.groups.has(Group::light)) light_term(p.light, t.light, b, w, g);
  }
  const double inv = 1.0 / static_cast<double>(batch);
  auto grads = std::make_shared<std::vector<Tensor>>();
  for (Tensor* t : {&g.center, &g.rgb, &g.rotation, &g.confidence, &g.light}) {
    if (!t->empty()) grads->push_back(std::move(*t));
  }
  Tape& tape = inputs.front().tape();
  return tape.record("supervised_loss", Tensor::scalar(total * inv), inputs,
                     [grads, inv](BackwardContext& ctx) {
                       const double go = ctx.grad_out()[0] * inv;
                       for (std::size_t i = 0; i < grads->size(); ++i) {
                         if (ctx.needs_grad(i)) ctx.grad(i).axpy(go, (*grads)[i]);
                       }
                     });
}

}  // namespace curio::train
