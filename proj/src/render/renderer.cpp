#include "curio/render/renderer.hpp"

#include <memory>

namespace curio::render {

std::vector<std::size_t> back_to_front(const std::vector<double>& depths, bool sort) {
  std::vector<std::size_t> order(depths.size());
  std::iota(order.begin(), order.end(), 0);
  if (sort) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return depths[a] > depths[b]; });
  }
  return order;
}

Image composite_image(const std::vector<Layer>& layers, const std::vector<double>& confidences,
                      const std::array<double, 3>& background, std::size_t size,
                      bool depth_sort) {
  Image img(size, size, 3);
  img.data = composite(layers, confidences, background, size, depth_sort);
  return img;
}

ObjectParams<double> object_params(const SceneObject& o, const Light& light,
                                   const worlds::WorldSpec& world) {
  ObjectParams<double> p;
  p.center = o.center;
  if (world.dims == 2) p.center[2] = 0.0;
  p.radius = world.radius;
  p.rgb = world.groups.has(Group::color) ? o.rgb : world.fixed_color;
  const Light& l = world.groups.has(Group::light) ? light : world.fixed_light;
  p.azimuth = l.azimuth;
  p.elevation = l.elevation;
  return p;
}

namespace {

Primitive primitive_for(const worlds::WorldSpec& world) {
  return world.dims == 2 ? Primitive::circle2d : Primitive::sphere;
}

}  // namespace

Image render_scene(const SceneCode& s, const worlds::WorldSpec& world, const Camera& cam,
                   const RenderSettings& settings) {
  std::vector<Layer> layers;
  std::vector<double> conf;
  const bool forced = world.fixed_count() || !world.groups.has(Group::confidence);
  for (const SceneObject& o : s.objects) {
    layers.push_back(
        render_layer(object_params(o, s.light, world), primitive_for(world), cam, settings));
    conf.push_back(forced ? 1.0 : o.confidence);
  }
  return composite_image(layers, conf, world.background, cam.image_size, settings.depth_sort);
}

namespace {

using D9 = Dual<kObjectParams>;

// Per-sample inputs gathered from the Vars (or world defaults).
struct BatchInputs {
  std::size_t batch = 0;
  std::size_t n = 0;
  std::vector<std::vector<ObjectParams<double>>> objects;  // [B][n]
  std::vector<std::vector<double>> confidence;              // [B][n]
};

BatchInputs gather(const SceneVars& v, const worlds::WorldSpec& world) {
  if (!v.center.valid()) throw ShapeMismatch("render_batch needs center predictions");
  const Tensor& c = v.center.value();
  if (c.rank() != 3 || c.dim(2) != world.dims) {
    throw ShapeMismatch("render_batch center must be [B,n," + std::to_string(world.dims) +
                        "], got " + shape_string(c.shape()));
  }
  BatchInputs in;
  in.batch = c.dim(0);
  in.n = c.dim(1);
  const std::size_t B = in.batch, n = in.n, dims = world.dims;
  auto check = [&](const Var& var, Shape expected, const char* what) {
    if (var.valid() && var.shape() != expected) {
      throw ShapeMismatch(std::string("render_batch ") + what + " must be " +
                          shape_string(expected) + ", got " + shape_string(var.shape()));
    }
  };
  check(v.rgb, {B, n, 3}, "rgb");
  check(v.confidence, {B, n}, "confidence");
  check(v.light, {B, 2}, "light");
  const bool forced = world.fixed_count() || !v.confidence.valid();

  in.objects.assign(B, std::vector<ObjectParams<double>>(n));
  in.confidence.assign(B, std::vector<double>(n, 1.0));
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      ObjectParams<double>& o = in.objects[b][i];
      for (std::size_t a = 0; a < dims; ++a) o.center[a] = c[(b * n + i) * dims + a];
      o.radius = world.radius;
      for (int ch = 0; ch < 3; ++ch) {
        o.rgb[ch] = v.rgb.valid() ? v.rgb.value()[(b * n + i) * 3 + ch] : world.fixed_color[ch];
      }
      o.azimuth = v.light.valid() ? v.light.value()[b * 2] : world.fixed_light.azimuth;
      o.elevation = v.light.valid() ? v.light.value()[b * 2 + 1] : world.fixed_light.elevation;
      if (!forced) in.confidence[b][i] = v.confidence.value()[b * n + i];
    }
  }
  return in;
}

// Writes one HWC composite into the [B,3,S,S] output at sample b.
void store_chw(const std::vector<double>& hwc, std::size_t s, Tensor& out, std::size_t b) {
  const std::size_t plane = s * s;
  double* dst = out.data().data() + b * 3 * plane;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) dst[c * plane + p] = hwc[p * 3 + c];
  }
}

LayerT<D9> dual_layer(const ObjectParams<double>& o, Primitive prim, const Camera& cam,
                      const RenderSettings& settings) {
  ObjectParams<D9> d;
  for (int a = 0; a < 3; ++a) d.center[a] = D9::variable(o.center[a], a);
  d.radius = D9::variable(o.radius, 3);
  for (int c = 0; c < 3; ++c) d.rgb[c] = D9::variable(o.rgb[c], 4 + c);
  d.azimuth = D9::variable(o.azimuth, 7);
  d.elevation = D9::variable(o.elevation, 8);
  return render_layer(d, prim, cam, settings);
}

}  // namespace

Var render_batch(const SceneVars& vars, const worlds::WorldSpec& world, const Camera& cam,
                 const RenderSettings& settings) {
  auto in = std::make_shared<BatchInputs>(gather(vars, world));
  const std::size_t s = cam.image_size;
  const Primitive prim = primitive_for(world);
  Tensor out({in->batch, 3, s, s});
  for (std::size_t b = 0; b < in->batch; ++b) {
    std::vector<Layer> layers;
    for (const auto& o : in->objects[b]) layers.push_back(render_layer(o, prim, cam, settings));
    store_chw(composite(layers, in->confidence[b], world.background, s, settings.depth_sort), s,
              out, b);
  }

  // Input slots: 0 center, 1 rgb, 2 confidence, 3 light. Missing Vars are
  // replaced by the center so the slot indices stay fixed; their gradients
  // are simply never requested.
  std::vector<Var> inputs = {vars.center, vars.rgb.valid() ? vars.rgb : vars.center,
                             vars.confidence.valid() ? vars.confidence : vars.center,
                             vars.light.valid() ? vars.light : vars.center};
  const bool has_rgb = vars.rgb.valid();
  const bool has_conf = vars.confidence.valid() && !world.fixed_count();
  const bool has_light = vars.light.valid();
  const std::size_t dims = world.dims;
  const std::array<double, 3> background = world.background;

  return vars.center.tape().record(
      "render_batch", std::move(out), inputs,
      [in, s, prim, cam, settings, has_rgb, has_conf, has_light, dims,
       background](BackwardContext& ctx) {
        const Tensor& g = ctx.grad_out();
        const std::size_t n = in->n, plane = s * s;
        const bool want_center = ctx.needs_grad(0);
        const bool want_rgb = has_rgb && ctx.needs_grad(1);
        const bool want_conf = has_conf && ctx.needs_grad(2);
        const bool want_light = has_light && ctx.needs_grad(3);
        if (!want_center && !want_rgb && !want_conf && !want_light) return;

        for (std::size_t b = 0; b < in->batch; ++b) {
          std::vector<LayerT<D9>> layers;
          std::vector<double> depths;
          for (const auto& o : in->objects[b]) {
            layers.push_back(dual_layer(o, prim, cam, settings));
            depths.push_back(layers.back().depth);
          }
          const std::vector<std::size_t> order = back_to_front(depths, settings.depth_sort);
          const std::vector<double>& conf = in->confidence[b];
          std::vector<std::array<double, kObjectParams>> dparam(n);
          std::vector<double> dconf(n, 0.0);
          std::vector<std::array<double, 3>> under(n);  // composite below each layer

          for (std::size_t p = 0; p < plane; ++p) {
            std::array<double, 3> acc = background;
            for (std::size_t idx : order) {
              under[idx] = acc;
              const double a = conf[idx] * layers[idx].alpha[p].v;
              for (int c = 0; c < 3; ++c) {
                acc[c] = a * layers[idx].rgb[p * 3 + c].v + (1.0 - a) * acc[c];
              }
            }
            std::array<double, 3> gc;
            for (int c = 0; c < 3; ++c) gc[c] = g[(b * 3 + c) * plane + p];
            for (auto it = order.rbegin(); it != order.rend(); ++it) {
              const std::size_t idx = *it;
              const D9& alpha = layers[idx].alpha[p];
              const double a = conf[idx] * alpha.v;
              double da = 0.0;
              for (int c = 0; c < 3; ++c) {
                const D9& rgb = layers[idx].rgb[p * 3 + c];
                da += gc[c] * (rgb.v - under[idx][c]);
                const double drgb = a * gc[c];
                for (int k = 0; k < kObjectParams; ++k) dparam[idx][k] += drgb * rgb.d[k];
              }
              dconf[idx] += da * alpha.v;
              const double dalpha = da * conf[idx];
              for (int k = 0; k < kObjectParams; ++k) dparam[idx][k] += dalpha * alpha.d[k];
              for (int c = 0; c < 3; ++c) gc[c] *= 1.0 - a;
            }
          }

          for (std::size_t i = 0; i < n; ++i) {
            if (want_center) {
              Tensor& gcen = ctx.grad(0);
              for (std::size_t a = 0; a < dims; ++a) gcen[(b * n + i) * dims + a] += dparam[i][a];
            }
            if (want_rgb) {
              Tensor& grgb = ctx.grad(1);
              for (int c = 0; c < 3; ++c) grgb[(b * n + i) * 3 + c] += dparam[i][4 + c];
            }
            if (want_conf) ctx.grad(2)[b * n + i] += dconf[i];
            if (want_light) {
              Tensor& gl = ctx.grad(3);
              gl[b * 2] += dparam[i][7];
              gl[b * 2 + 1] += dparam[i][8];
            }
          }
        }
      });
}

}  // namespace curio::render
