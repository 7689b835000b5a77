#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "curio/errors.hpp"
#include "curio/train/train.hpp"

using namespace curio;
using namespace curio::train;

namespace {

const worlds::Dataset& circles_data() {
  static const worlds::Dataset d = worlds::generate_dataset(worlds::circles(32), 48, 5);
  return d;
}

Tensor first_batch(const worlds::Dataset& d, std::size_t n) {
  return nn::stack_images(d.images, 0, n);
}

std::vector<Tensor> values(const ParameterStore& s) {
  std::vector<Tensor> out;
  for (const Parameter* p : s.all()) out.push_back(p->value);
  return out;
}

TrainConfig small_config(Mode mode) {
  TrainConfig c;
  c.mode = mode;
  c.batch_size = 8;
  c.virtual_batch = 8;
  c.critic_lr = 1e-4;
  c.max_epochs = 2;
  c.val_images = 8;
  c.seed = 9;
  return c;
}

}  // namespace

TEST(ImageLoss, TrivialValues) {
  Tape tape;
  const Var a = tape.constant(Tensor({1, 3, 4, 4}, 0.0));
  const Var b = tape.constant(Tensor({1, 3, 4, 4}, 1.0));
  EXPECT_EQ(l2_image_loss(a, a).value()[0], 0.0);
  EXPECT_DOUBLE_EQ(l2_image_loss(a, b).value()[0], 1.0);
  EXPECT_THROW(l2_image_loss(a, tape.constant(Tensor({1, 3, 4, 5}))), ShapeMismatch);
}

TEST(ImageLoss, GradientIsScaledResidual) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor r({1, 3, 5, 5}), in({1, 3, 5, 5});
  for (double& v : r.data()) v = u(rng);
  for (double& v : in.data()) v = u(rng);
  Tape tape;
  const Var x = tape.variable(r);
  tape.backward(l2_image_loss(x, tape.constant(in)));
  const Tensor g = tape.grad(x);
  const double p = static_cast<double>(r.size());
  for (std::size_t i = 0; i < r.size(); i += 7) {
    EXPECT_NEAR(g[i], 2.0 * (r[i] - in[i]) / p, 1e-15);
    Tensor hi = r, lo = r;
    hi[i] += 1e-6;
    lo[i] -= 1e-6;
    Tape t2(false);
    const double fd = (l2_image_loss(t2.constant(hi), t2.constant(in)).value()[0] -
                       l2_image_loss(t2.constant(lo), t2.constant(in)).value()[0]) / 2e-6;
    EXPECT_NEAR(g[i], fd, 1e-9);
  }
}

TEST(CriticLoss, HalfEverywhere) {
  const auto w = worlds::circles(32);
  nn::Model model(nn::network_for(w, 0.25), true, 0);
  // A zero gain on the last normalization makes every logit equal the
  // (zero) output bias.
  model.critic_params().find("critic.conv5.bn.gamma")->value.fill(0.0);
  Tape tape;
  const Var real = tape.constant(first_batch(circles_data(), 2));
  const Var fake = tape.constant(nn::stack_images(circles_data().images, 2, 2));
  const CriticLosses l = critic_losses(model.critic(), tape, real, fake);
  EXPECT_NEAR(l.d_loss.value()[0], 2.0 * std::numbers::ln2, 1e-12);
  EXPECT_NEAR(l.g_loss.value()[0], std::numbers::ln2, 1e-12);
}

TEST(CriticLoss, PerfectCriticHasNoLoss) {
  Tape tape;
  const Var real = tape.constant(Tensor({4}, 1.0 - 1e-10));
  const Var fake = tape.constant(Tensor({4}, 1e-10));
  EXPECT_LT(bce(real, 1.0).value()[0] + bce(fake, 0.0).value()[0], 1e-8);
}

TEST(CriticLoss, CuriosityReachesTheFakeImages) {
  const auto w = worlds::circles(32);
  nn::Model model(nn::network_for(w, 0.25), true, 3);
  Tape tape;
  const Var real = tape.constant(first_batch(circles_data(), 2));
  const Var fake = tape.variable(Tensor({2, 3, 32, 32}, 0.3));
  const CriticLosses l = critic_losses(model.critic(), tape, real, fake);
  tape.backward(l.g_loss);
  double norm = 0.0;
  for (double v : tape.grad(fake).data()) norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST(SupervisedLoss, MatchesMetricAndIgnoresOrder) {
  const auto w = worlds::spheres(32);
  const auto d = worlds::generate_dataset(w, 6, 2);
  const SceneCode& gt = d.label(0);
  EXPECT_EQ(supervised_loss(gt, gt, {}, w), 0.0);
  SceneCode perm = gt;
  std::swap(perm.objects[0], perm.objects[2]);
  EXPECT_EQ(supervised_loss(perm, gt, {}, w), 0.0);
  EXPECT_EQ(supervised_loss(d.label(1), gt, {}, w), eval::param_metric(d.label(1), gt, {}, w).total);
}

TEST(SupervisedLoss, BatchValueAndGradient) {
  const auto w = worlds::spheres(32);
  const auto d = worlds::generate_dataset(w, 8, 4);
  const nn::NetworkConfig net = nn::network_for(w, 0.25);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor center({2, 3, 3}), rgb({2, 3, 3});
  for (double& v : center.data()) v = 2.0 * u(rng);
  for (double& v : rgb.data()) v = 0.5 + 0.4 * u(rng);
  const std::vector<SceneCode> gt{d.label(0), d.label(1)};

  auto value = [&](const Tensor& c, const Tensor& r) {
    Tape t(false);
    nn::HeadOutputs o;
    o.center = t.constant(c);
    o.rgb = t.constant(r);
    return supervised_loss(o, gt, net, {}, w).value()[0];
  };
  Tape tape;
  nn::HeadOutputs out;
  out.center = tape.variable(center);
  out.rgb = tape.variable(rgb);
  const Var loss = supervised_loss(out, gt, net, {}, w);
  const auto codes = nn::decode(out, net);
  const double expect = (eval::param_metric(codes[0], gt[0], {}, w).total +
                         eval::param_metric(codes[1], gt[1], {}, w).total) / 2.0;
  EXPECT_EQ(loss.value()[0], expect);
  tape.backward(loss);
  const Tensor gc = tape.grad(out.center), gr = tape.grad(out.rgb);
  for (std::size_t i = 0; i < center.size(); ++i) {
    Tensor hi = center, lo = center;
    hi[i] += 1e-6;
    lo[i] -= 1e-6;
    EXPECT_NEAR(gc[i], (value(hi, rgb) - value(lo, rgb)) / 2e-6, 1e-6);
    hi = rgb;
    lo = rgb;
    hi[i] += 1e-6;
    lo[i] -= 1e-6;
    EXPECT_NEAR(gr[i], (value(center, hi) - value(center, lo)) / 2e-6, 1e-6);
  }
}

TEST(SupervisedLoss, UnmatchedProposalsLoseConfidence) {
  const auto w = worlds::varied(32);
  const nn::NetworkConfig net = nn::network_for(w, 0.25);
  SceneCode gt;
  gt.objects.resize(2);
  gt.objects[0].center = {1.0, 0.0, 0.0};
  gt.objects[1].center = {-1.0, 0.0, 0.0};
  Tensor center({1, net.n_proposals, 3}), rgb({1, net.n_proposals, 3}, 1.0);
  Tensor conf({1, net.n_proposals}, 0.5);
  center[0] = 1.0;  // proposal 0 sits on object 0
  center[3] = -1.0;  // proposal 1 on object 1
  for (std::size_t i = 2; i < net.n_proposals; ++i) center[i * 3 + 1] = 3.0;
  Tape tape;
  nn::HeadOutputs out;
  out.center = tape.constant(center);
  out.rgb = tape.constant(rgb);
  out.confidence = tape.variable(conf);
  tape.backward(supervised_loss(out, {gt}, net, {}, w));
  const Tensor g = tape.grad(out.confidence);
  EXPECT_LT(g[0], 0.0);
  EXPECT_LT(g[1], 0.0);
  for (std::size_t i = 2; i < net.n_proposals; ++i) EXPECT_GT(g[i], 0.0);
}

TEST(Blur, KernelAndConstantImage) {
  const auto k = gaussian_kernel(9, 2.0);
  double s = 0.0;
  for (double v : k) s += v;
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_THROW(gaussian_kernel(8, 2.0), InvalidConfig);
  const render::Image flat(16, 16, 3, 0.37);
  const render::Image b = gaussian_blur(flat);
  for (double v : b.data) EXPECT_NEAR(v, 0.37, 1e-12);
}

TEST(Blur, MatchesDenseConvolution) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  render::Image img(13, 17, 3);
  for (double& v : img.data) v = u(rng);
  const auto k = gaussian_kernel(9, 1.7);
  const render::Image b = gaussian_blur(img, 9, 1.7);
  auto reflect = [](long i, long n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
    return static_cast<std::size_t>(i);
  };
  for (long y = 0; y < 13; ++y) {
    for (long x = 0; x < 17; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0.0;
        for (long dy = -4; dy <= 4; ++dy) {
          for (long dx = -4; dx <= 4; ++dx) {
            s += k[static_cast<std::size_t>(dy + 4)] * k[static_cast<std::size_t>(dx + 4)] *
                 img.at(reflect(y + dy, 13), reflect(x + dx, 17), c);
          }
        }
        EXPECT_NEAR(b.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c), s, 1e-12);
      }
    }
  }
}

TEST(Blur, BatchGradientIsAdjoint) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor x({2, 3, 12, 12}), probe({2, 3, 12, 12});
  for (double& v : x.data()) v = u(rng);
  for (double& v : probe.data()) v = u(rng);
  Tape tape;
  const Var xv = tape.variable(x);
  tape.backward(sum(mul(gaussian_blur(xv, 9, 2.0), tape.constant(probe))));
  const Tensor g = tape.grad(xv);
  for (std::size_t i = 0; i < x.size(); i += 37) {
    Tensor hi = x, lo = x;
    hi[i] += 1e-6;
    lo[i] -= 1e-6;
    Tape t(false);
    const double fd = (sum(mul(gaussian_blur(t.constant(hi), 9, 2.0), t.constant(probe))).value()[0] -
                       sum(mul(gaussian_blur(t.constant(lo), 9, 2.0), t.constant(probe))).value()[0]) /
                      2e-6;
    EXPECT_NEAR(g[i], fd, 1e-8);
  }
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.virtual_batch = 48;
  EXPECT_THROW(c.validate(), InvalidConfig);
  c = {};
  c.supervision_frac = 0.0;
  EXPECT_THROW(c.validate(), InvalidConfig);
  EXPECT_THROW(parse_mode("gan"), InvalidConfig);
  EXPECT_EQ(parse_mode(mode_name(Mode::noncur)), Mode::noncur);
}

TEST(TrainStep, NoncurLeavesCriticAlone) {
  const auto w = worlds::circles(32);
  nn::Model model(nn::network_for(w, 0.25), true, 1);
  const auto before = values(model.critic_params());
  const auto gen_before = values(model.generator_params());
  TrainState state;
  const TrainConfig c = small_config(Mode::noncur);
  for (int i = 0; i < 3; ++i) train_step(model, state, c, w, first_batch(circles_data(), 8));
  EXPECT_EQ(values(model.critic_params()), before);
  EXPECT_NE(values(model.generator_params()), gen_before);
  EXPECT_EQ(state.step, 3u);
}

TEST(TrainStep, ClipsGeneratorGradients) {
  const auto w = worlds::circles(32);
  nn::Model model(nn::network_for(w, 0.25), true, 1);
  TrainState state;
  TrainConfig c = small_config(Mode::curious);
  c.grad_clip = 1e-3;
  const StepMetrics m = train_step(model, state, c, w, first_batch(circles_data(), 8));
  EXPECT_GT(m.grad_norm, 1e-3);
  const auto params = model.generator_params().trainable();
  EXPECT_LE(grad_l2_norm(params), 1e-3 * (1.0 + 1e-12));
  EXPECT_GT(m.d_loss, 0.0);
  EXPECT_GT(m.g_loss, 0.0);
}

TEST(TrainStep, SumReductionScalesByPixelsPerImage) {
  const auto w = worlds::circles(32);
  TrainConfig mean_cfg = small_config(Mode::noncur);
  mean_cfg.grad_clip = 1e30;
  TrainConfig sum_cfg = mean_cfg;
  sum_cfg.image_loss_reduction = Reduction::sum;
  const Tensor batch = first_batch(circles_data(), 8);
  nn::Model a(nn::network_for(w, 0.25), true, 3), b(nn::network_for(w, 0.25), true, 3);
  TrainState sa, sb;
  const StepMetrics ma = train_step(a, sa, mean_cfg, w, batch);
  const StepMetrics mb = train_step(b, sb, sum_cfg, w, batch);
  EXPECT_DOUBLE_EQ(ma.image_mse, mb.image_mse);
  EXPECT_NEAR(mb.grad_norm / ma.grad_norm, 3.0 * 32 * 32, 1e-6);
}

TEST(TrainStep, VirtualBatchesAccumulateExactly) {
  const auto w = worlds::circles(32);
  for (Mode mode : {Mode::noncur, Mode::curious}) {
    nn::Model a(nn::network_for(w, 0.25), true, 2), b(nn::network_for(w, 0.25), true, 2);
    TrainConfig ca = small_config(mode);
    ca.freeze_norm = true;
    TrainConfig cb = ca;
    cb.virtual_batch = 2;
    TrainState sa, sb;
    const Tensor batch = first_batch(circles_data(), 8);
    for (int i = 0; i < 2; ++i) {
      train_step(a, sa, ca, w, batch);
      train_step(b, sb, cb, w, batch);
    }
    const auto va = values(a.generator_params()), vb = values(b.generator_params());
    for (std::size_t i = 0; i < va.size(); ++i) {
      for (std::size_t j = 0; j < va[i].size(); ++j) ASSERT_NEAR(va[i][j], vb[i][j], 1e-10);
    }
  }
}

TEST(TrainLoop, SupervisionFractions) {
  EXPECT_EQ(supervised_subset(200, 0.05, 1).size(), 10u);
  EXPECT_EQ(supervised_subset(200, 0.10, 1).size(), 20u);
  EXPECT_EQ(supervised_subset(200, 1.0, 1).size(), 200u);
  EXPECT_EQ(supervised_subset(10, 0.01, 1).size(), 1u);
  EXPECT_EQ(supervised_subset(200, 0.1, 1), supervised_subset(200, 0.1, 1));
}

TEST(TrainLoop, DeterministicLogs) {
  const auto w = circles_data().world;
  const TrainConfig c = small_config(Mode::curious);
  nn::Model a(nn::network_for(w, 0.25), true, 4), b(nn::network_for(w, 0.25), true, 4);
  const TrainResult ra = train::train(a, circles_data(), c), rb = train::train(b, circles_data(), c);
  ASSERT_EQ(ra.log.size(), 4u);
  for (std::size_t i = 0; i < ra.log.size(); ++i) {
    EXPECT_EQ(format_log_row(ra.log[i]), format_log_row(rb.log[i]));
  }
  EXPECT_FALSE(std::isnan(ra.log[1].eq1_error));
  EXPECT_EQ(values(a.generator_params()), values(b.generator_params()));
}

TEST(TrainLoop, ResumeContinuesBitwise) {
  const auto w = circles_data().world;
  TrainConfig c = small_config(Mode::curious);
  c.checkpoint_every = 1;
  const auto dir = std::filesystem::temp_directory_path() / "curio_resume_test";
  std::filesystem::remove_all(dir);

  nn::Model straight(nn::network_for(w, 0.25), true, 6);
  train::train(straight, circles_data(), c);

  TrainConfig first = c;
  first.max_epochs = 1;
  nn::Model part(nn::network_for(w, 0.25), true, 6);
  train::train(part, circles_data(), first, {dir, std::nullopt, {}});
  const CheckpointInfo info = read_checkpoint_info(dir / "checkpoint");
  EXPECT_EQ(info.epoch, 1u);
  nn::Model cont(info.net, info.critic, 123);  // weights come from the checkpoint
  const TrainResult r = train::train(cont, circles_data(), c, {dir, dir / "checkpoint", {}});
  ASSERT_EQ(r.log.size(), 2u);
  EXPECT_EQ(r.log[0].epoch, 2u);
  EXPECT_EQ(values(cont.generator_params()), values(straight.generator_params()));
  EXPECT_EQ(values(cont.critic_params()), values(straight.critic_params()));
  std::filesystem::remove_all(dir);
}

TEST(TrainLoop, UnsupervisedModesRunWithoutLabels) {
  const auto dir = std::filesystem::temp_directory_path() / "curio_nolabel_test";
  std::filesystem::remove_all(dir);
  worlds::save_dataset(circles_data(), dir, false);
  const worlds::Dataset blind = worlds::load_dataset(dir, false);
  const auto w = blind.world;
  TrainConfig c = small_config(Mode::noncur);
  c.max_epochs = 1;
  nn::Model m(nn::network_for(w, 0.25), false, 1);
  const TrainResult r = train::train(m, blind, c);
  EXPECT_TRUE(std::isnan(r.log.back().eq1_error));
  c.mode = Mode::supervised;
  EXPECT_THROW(train::train(m, blind, c), CapabilityError);
  std::filesystem::remove_all(dir);
}
