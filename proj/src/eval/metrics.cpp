#include "curio/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "curio/errors.hpp"

namespace curio::eval {

namespace {

double distance(const Point& p, const Point& q) {
  const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

void check_counts(std::size_t a, std::size_t b) {
  if (a != b) {
    throw CountMismatch("cannot match " + std::to_string(a) + " objects against " +
                        std::to_string(b));
  }
}

std::vector<Point> positions(const SceneCode& s) {
  std::vector<Point> out;
  for (const SceneObject& o : s.objects) out.push_back(o.center);
  return out;
}

}  // namespace

double assignment_cost(const std::vector<Point>& a, const std::vector<Point>& b,
                       const Permutation& perm) {
  double cost = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) cost += distance(a[i], b[perm[i]]);
  return cost;
}

Permutation assignment_exhaustive(const std::vector<Point>& a, const std::vector<Point>& b) {
  check_counts(a.size(), b.size());
  Permutation perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  Permutation best = perm;
  double best_cost = assignment_cost(a, b, perm);
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double c = assignment_cost(a, b, perm);
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  }
  return best;
}

Permutation partial_assignment(const std::vector<Point>& a, const std::vector<Point>& b) {
  const std::size_t n = a.size(), m = b.size();
  if (n > m) {
    throw CountMismatch("partial assignment needs at most as many rows (" + std::to_string(n) +
                        ") as columns (" + std::to_string(m) + ")");
  }
  if (n == 0) return {};
  // Shortest augmenting path with potentials; rows and columns are 1-based
  // so that index 0 can stand for the virtual start column.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = distance(a[i0 - 1], b[j - 1]) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Permutation perm(n);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) perm[p[j] - 1] = j - 1;
  }
  return perm;
}

Permutation assignment_hungarian(const std::vector<Point>& a, const std::vector<Point>& b) {
  check_counts(a.size(), b.size());
  return partial_assignment(a, b);
}

Permutation optimal_assignment(const std::vector<Point>& a, const std::vector<Point>& b) {
  check_counts(a.size(), b.size());
  return a.size() <= kExhaustiveLimit ? assignment_exhaustive(a, b) : assignment_hungarian(a, b);
}

namespace {

double rotation_distance(const SceneObject& a, const SceneObject& b) {
  return std::abs(wrap_angle(a.angle() - b.angle()));
}

double light_angle(const Light& a, const Light& b) {
  const auto da = a.direction(), db = b.direction();
  const double dot = da[0] * db[0] + da[1] * db[1] + da[2] * db[2];
  return std::acos(std::clamp(dot, -1.0, 1.0));
}

ParamError score(const SceneCode& a, const SceneCode& b, const std::vector<std::size_t>& ia,
                 const std::vector<std::size_t>& ib, const MetricWeights& w,
                 const worlds::WorldSpec& world) {
  ParamError e;
  e.matched = ia.size();
  auto add = [&](Group g, double v) { e.group[static_cast<std::size_t>(g)] += v; };
  for (std::size_t k = 0; k < ia.size(); ++k) {
    const SceneObject& oa = a.objects[ia[k]];
    const SceneObject& ob = b.objects[ib[k]];
    add(Group::position, distance(oa.center, ob.center));
    if (world.groups.has(Group::color)) {
      add(Group::color, distance(oa.rgb, ob.rgb));
    }
    if (world.groups.has(Group::rotation)) add(Group::rotation, rotation_distance(oa, ob));
    if (world.groups.has(Group::confidence)) {
      add(Group::confidence, std::abs(oa.confidence - ob.confidence));
    }
  }
  if (world.groups.has(Group::light)) add(Group::light, light_angle(a.light, b.light));
  for (Group g : kAllGroups) e.total += w[g] * e[g];
  return e;
}

}  // namespace

ParamError param_metric(const SceneCode& a, const SceneCode& b, const MetricWeights& w,
                        const worlds::WorldSpec& world) {
  check_counts(a.objects.size(), b.objects.size());
  const Permutation perm = optimal_assignment(positions(a), positions(b));
  std::vector<std::size_t> ia(perm.size());
  std::iota(ia.begin(), ia.end(), 0);
  return score(a, b, ia, perm, w, world);
}

ParamError matched_param_metric(const SceneCode& a, const SceneCode& b, const MetricWeights& w,
                                const worlds::WorldSpec& world) {
  if (a.objects.size() == b.objects.size()) return param_metric(a, b, w, world);
  const bool a_smaller = a.objects.size() < b.objects.size();
  const SceneCode& small = a_smaller ? a : b;
  const SceneCode& large = a_smaller ? b : a;
  const Permutation perm = partial_assignment(positions(small), positions(large));
  std::vector<std::size_t> is(perm.size());
  std::iota(is.begin(), is.end(), 0);
  return a_smaller ? score(a, b, is, perm, w, world) : score(a, b, perm, is, w, world);
}

SceneCode select_confident(const SceneCode& s, double threshold) {
  SceneCode out;
  out.light = s.light;
  for (const SceneObject& o : s.objects) {
    if (o.confidence >= threshold) out.objects.push_back(o);
  }
  return out;
}

double confidence_error(const SceneCode& pred, const SceneCode& gt) {
  if (pred.objects.empty()) return 0.0;
  std::vector<double> target(pred.objects.size(), 0.0);
  if (gt.objects.size() >= pred.objects.size()) {
    // Every proposal has a partner.
    std::fill(target.begin(), target.end(), 1.0);
  } else {
    for (std::size_t j : partial_assignment(positions(gt), positions(pred))) target[j] = 1.0;
  }
  double err = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = pred.objects[i].confidence - target[i];
    err += d * d;
  }
  return err / static_cast<double>(target.size());
}

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> g{};
  double total = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double x = static_cast<double>(i) - (kWindow - 1) / 2.0;
    g[i] = std::exp(-x * x / (2.0 * kSigma * kSigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

// Separable 'valid' filtering of one channel.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::array<double, kWindow>& g) {
  const std::size_t oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(h * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) s += g[k] * img[y * w + x + k];
      rows[y * ow + x] = s;
    }
  }
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) s += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

}  // namespace

double dssim(const render::Image& a, const render::Image& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw ShapeMismatch("dssim needs images of equal shape");
  }
  if (a.height < kWindow || a.width < kWindow) {
    throw ShapeMismatch("dssim needs images of at least 11x11 pixels");
  }
  const auto g = gaussian_window();
  const std::size_t h = a.height, w = a.width, plane = h * w;
  double ssim_total = 0.0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
    for (std::size_t p = 0; p < plane; ++p) {
      x[p] = a.data[p * a.channels + c];
      y[p] = b.data[p * a.channels + c];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
    const auto sxx = filter_valid(xx, h, w, g), syy = filter_valid(yy, h, w, g);
    const auto sxy = filter_valid(xy, h, w, g);
    double channel = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      channel += ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cov + kC2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
    }
    ssim_total += channel / static_cast<double>(mx.size());
  }
  const double ssim = ssim_total / static_cast<double>(a.channels);
  return std::clamp((1.0 - ssim) / 2.0, 0.0, 1.0);
}

}  // namespace curio::eval
