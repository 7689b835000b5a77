#include "curio/oracle/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "curio/errors.hpp"

namespace curio::oracle {

std::vector<double> render_analytic(double t, double l, std::size_t width, double sigma) {
  if (width < 16) throw InvalidConfig("analytic strips need at least 16 pixels");
  std::vector<double> strip(width);
  for (std::size_t i = 0; i < width; ++i) {
    const double x = (static_cast<double>(i) + 0.5) / static_cast<double>(width);
    const double u = (x - t) / sigma;
    strip[i] = l * std::exp(-u * u);
  }
  return strip;
}

double l2_analytic(const Params& pred, const Params& target, std::size_t width, Params* grad,
                   double sigma) {
  const std::vector<double> want = render_analytic(target[0], target[1], width, sigma);
  const double n = static_cast<double>(width);
  double loss = 0.0, dt = 0.0, dl = 0.0;
  for (std::size_t i = 0; i < width; ++i) {
    const double x = (static_cast<double>(i) + 0.5) / n;
    const double u = (x - pred[0]) / sigma;
    const double g = std::exp(-u * u);
    const double diff = pred[1] * g - want[i];
    loss += diff * diff;
    dl += 2.0 * diff * g;
    dt += 2.0 * diff * pred[1] * g * 2.0 * u / sigma;
  }
  if (grad) *grad = {dt / n, dl / n};
  return loss / n;
}

std::vector<Params> kde_kernel(const std::vector<Params>& pred, const std::vector<Params>& samples,
                               double bandwidth) {
  if (pred.empty() || samples.empty()) throw InvalidConfig("kde_kernel needs nonempty inputs");
  std::vector<Params> k(samples.size(), Params{0.0, 0.0});
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (std::size_t j = 0; j < samples.size(); ++j) {
    for (const Params& p : pred) {
      for (int a = 0; a < 2; ++a) {
        const double u = (p[a] - samples[j][a]) / bandwidth;
        k[j][a] += std::exp(-u * u);
      }
    }
    k[j][0] *= inv_n;
    k[j][1] *= inv_n;
  }
  return k;
}

double discrepancy(const std::vector<Params>& responses) {
  const std::size_t m = responses.size();
  if (m < 2) throw InvalidConfig("discrepancy needs at least two reference samples");
  double mean = 0.0;
  for (const Params& r : responses) mean += 0.5 * (r[0] + r[1]);
  mean /= static_cast<double>(m);
  double d = 0.0;
  for (const Params& r : responses) {
    const double e = 0.5 * (r[0] + r[1]) - mean;
    d += e * e;
  }
  return d / static_cast<double>(m - 1);
}

double discrepancy_with_grad(const std::vector<Params>& pred, const std::vector<Params>& samples,
                             double bandwidth, std::vector<Params>* grad) {
  const std::vector<Params> k = kde_kernel(pred, samples, bandwidth);
  const double d = discrepancy(k);
  if (!grad) return d;
  const std::size_t m = samples.size();
  double mean = 0.0;
  for (const Params& r : k) mean += 0.5 * (r[0] + r[1]);
  mean /= static_cast<double>(m);
  // dD/dE_j = 2 (E_j - mean) / (m - 1); the mean's own dependence cancels.
  std::vector<double> de(m);
  for (std::size_t j = 0; j < m; ++j) {
    de[j] = 2.0 * (0.5 * (k[j][0] + k[j][1]) - mean) / static_cast<double>(m - 1);
  }
  const double scale = 0.5 / static_cast<double>(pred.size());
  grad->assign(pred.size(), Params{0.0, 0.0});
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      for (int a = 0; a < 2; ++a) {
        const double diff = pred[i][a] - samples[j][a];
        const double u = diff / bandwidth;
        (*grad)[i][a] += de[j] * scale * std::exp(-u * u) * (-2.0 * diff / (bandwidth * bandwidth));
      }
    }
  }
  return d;
}

void OracleConfig::validate() const {
  if (problems == 0) throw InvalidConfig("oracle needs at least one problem");
  if (curiosity && problems < 16) {
    throw InvalidConfig("the distribution term needs at least 16 problems");
  }
  if (!(lr > 0.0)) throw InvalidConfig("oracle learning rate must be positive");
  if (!(bandwidth > 0.0)) throw InvalidConfig("kernel bandwidth must be positive");
  if (samples < 2) throw InvalidConfig("oracle needs at least two reference samples");
  if (width < 16) throw InvalidConfig("analytic strips need at least 16 pixels");
  if (!(weight >= 0.0)) throw InvalidConfig("discrepancy weight must be non-negative");
  if (!(clamp_lo < clamp_hi)) throw InvalidConfig("oracle clamp range is empty");
}

namespace {

void record(OracleResult& r, const OracleConfig& cfg, std::size_t step,
            const std::vector<Params>& cur, double d) {
  for (std::size_t i = 0; i < cur.size(); ++i) {
    const double loss = l2_analytic(cur[i], r.targets[i], cfg.width, nullptr);
    r.trajectory.push_back({step, i, cur[i][0], cur[i][1], loss, d});
  }
}

}  // namespace

OracleResult optimize_joint(const OracleConfig& cfg, std::size_t record_every) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto draw = [&](std::size_t n) {
    std::vector<Params> v(n);
    for (Params& p : v) p = {u(rng), u(rng)};
    return v;
  };
  OracleResult r;
  r.targets = draw(cfg.problems);
  const std::vector<Params> samples = draw(cfg.samples);
  r.initial = draw(cfg.problems);
  std::vector<Params> cur = r.initial;

  auto current_d = [&]() { return discrepancy(kde_kernel(cur, samples, cfg.bandwidth)); };
  record(r, cfg, 0, cur, current_d());
  std::vector<Params> dgrad;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    if (cfg.curiosity) discrepancy_with_grad(cur, samples, cfg.bandwidth, &dgrad);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      Params g;
      l2_analytic(cur[i], r.targets[i], cfg.width, &g);
      if (cfg.curiosity) {
        g[0] += cfg.weight * dgrad[i][0];
        g[1] += cfg.weight * dgrad[i][1];
      }
      for (int a = 0; a < 2; ++a) {
        cur[i][a] = std::clamp(cur[i][a] - cfg.lr * g[a], cfg.clamp_lo, cfg.clamp_hi);
      }
    }
    const bool last = step == cfg.steps;
    if (last || (record_every > 0 && step % record_every == 0)) record(r, cfg, step, cur, current_d());
  }

  r.final = cur;
  std::size_t collapsed = 0, solved = 0;
  for (std::size_t i = 0; i < cur.size(); ++i) {
    const double et = std::abs(cur[i][0] - r.targets[i][0]);
    const double el = std::abs(cur[i][1] - r.targets[i][1]);
    r.final_error.push_back(std::max(et, el));
    const bool c = cur[i][1] < cfg.collapse_below;
    r.collapsed.push_back(c);
    collapsed += c;
    solved += et < cfg.success_within && el < cfg.success_within;
  }
  r.collapse_fraction = static_cast<double>(collapsed) / static_cast<double>(cur.size());
  r.success_fraction = static_cast<double>(solved) / static_cast<double>(cur.size());
  return r;
}

render::Image plot_state(const std::vector<Params>& targets, const std::vector<Params>& current,
                         std::size_t size) {
  render::Image img(size, size, 3, 1.0);
  // The plotted window spans the clamp range [-0.1, 1.1] on both axes.
  auto to_pixel = [&](double v) {
    return static_cast<long>(std::floor((v + 0.1) / 1.2 * static_cast<double>(size)));
  };
  // Unit square outline.
  const long lo = to_pixel(0.0), hi = to_pixel(1.0);
  for (long k = lo; k <= hi; ++k) {
    for (long e : {lo, hi}) {
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(static_cast<std::size_t>(e), static_cast<std::size_t>(k), c) = 0.7;
        img.at(static_cast<std::size_t>(k), static_cast<std::size_t>(e), c) = 0.7;
      }
    }
  }
  auto dot = [&](const Params& p, std::array<double, 3> color) {
    const long px = to_pixel(p[0]);
    const long py = static_cast<long>(size) - 1 - to_pixel(p[1]);  // l grows upward
    for (long dy = -1; dy <= 1; ++dy) {
      for (long dx = -1; dx <= 1; ++dx) {
        const long x = px + dx, y = py + dy;
        if (x < 0 || y < 0 || x >= static_cast<long>(size) || y >= static_cast<long>(size)) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = color[c];
        }
      }
    }
  };
  for (const Params& t : targets) dot(t, {0.1, 0.6, 0.1});
  for (const Params& p : current) dot(p, {0.85, 0.1, 0.1});
  return img;
}

void write_oracle_outputs(const OracleResult& r, const OracleConfig& cfg,
                          const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "frames", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream csv(dir / "trajectory.csv");
  csv << "step,problem_id,t,l,loss,D\n";
  char buf[160];
  for (const TrajectoryRow& row : r.trajectory) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g\n", row.step, row.problem,
                  row.t, row.l, row.loss, row.d);
    csv << buf;
  }
  if (!csv) throw IoError("cannot write trajectory.csv");

  std::vector<Params> state;
  std::size_t step = r.trajectory.empty() ? 0 : r.trajectory.front().step;
  auto flush = [&]() {
    std::snprintf(buf, sizeof buf, "step_%06zu.png", step);
    render::write_png(dir / "frames" / buf, plot_state(r.targets, state));
    state.clear();
  };
  for (const TrajectoryRow& row : r.trajectory) {
    if (row.step != step && !state.empty()) flush();
    step = row.step;
    state.push_back({row.t, row.l});
  }
  if (!state.empty()) flush();

  std::ofstream summary(dir / "summary.txt");
  summary << "curiosity=" << (cfg.curiosity ? 1 : 0) << "\nproblems=" << cfg.problems
          << "\nsteps=" << cfg.steps << "\ncollapse_fraction=" << r.collapse_fraction
          << "\nsuccess_fraction=" << r.success_fraction << "\n";
  if (!summary) throw IoError("cannot write summary.txt");
}

}  // namespace curio::oracle
