#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "curio/autodiff/ops.hpp"
#include "curio/autodiff/optim.hpp"
#include "curio/errors.hpp"
#include "support/gradcheck.hpp"

using namespace curio;
using curio::testing::gradcheck;
using curio::testing::random_tensor;

namespace {

Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

}  // namespace

TEST(Elementwise, AddAndMulByZero) {
  Tape tape;
  Var a = tape.constant(vec({1, 2}));
  Var b = tape.constant(vec({3, 4}));
  EXPECT_EQ(add(a, b).value(), vec({4, 6}));

  Var x = tape.variable(vec({0.3, -2.0, 5.0}));
  Var z = mul(x, tape.constant(Tensor::scalar(0.0)));
  EXPECT_EQ(z.value(), vec({0, 0, 0}));
  tape.backward(sum(z));
  EXPECT_EQ(tape.grad(x), vec({0, 0, 0}));
}

TEST(Elementwise, ExpDerivativeAtZero) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(0.0));
  tape.backward(exp(x));
  const double h = 1e-5;
  const double fd = (std::exp(h) - std::exp(-h)) / (2 * h);
  EXPECT_NEAR(tape.grad(x)[0], 1.0, 1e-12);
  EXPECT_NEAR(tape.grad(x)[0], fd, 1e-6);
}

TEST(Elementwise, DivisionByZeroIsAnError) {
  Tape tape;
  Var a = tape.constant(vec({1, 2}));
  Var b = tape.constant(vec({1, 0}));
  EXPECT_THROW(div(a, b), NumericError);
  EXPECT_THROW(sqrt(tape.constant(vec({-1}))), NumericError);
  EXPECT_THROW(exp(tape.constant(vec({1000}))), NumericError);
}

TEST(Elementwise, ShapeMismatch) {
  Tape tape;
  EXPECT_THROW(add(tape.constant(vec({1, 2})), tape.constant(vec({1, 2, 3}))),
               ShapeMismatch);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(1);
  const ElementwiseOp binary[] = {ElementwiseOp::add, ElementwiseOp::sub,
                                  ElementwiseOp::mul, ElementwiseOp::div};
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng, 0.5, 1.5);
    for (ElementwiseOp op : binary) {
      EXPECT_LT(gradcheck([op](Tape&, const std::vector<Var>& v) {
                  return elementwise(op, v[0], v[1]);
                }, {a, b}),
                1e-4);
      EXPECT_LT(gradcheck([op](Tape&, const std::vector<Var>& v) {
                  return elementwise(op, v[0], v[1]);
                }, {a, Tensor::scalar(b[0])}),
                1e-4);
    }
    for (ElementwiseOp op : {ElementwiseOp::neg, ElementwiseOp::exp,
                             ElementwiseOp::square}) {
      EXPECT_LT(gradcheck([op](Tape&, const std::vector<Var>& v) {
                  return elementwise(op, v[0]);
                }, {a}),
                1e-4);
    }
    EXPECT_LT(gradcheck([](Tape&, const std::vector<Var>& v) { return sqrt(v[0]); },
                        {b}),
              1e-4);
  }
}

TEST(Matmul, IdentityAndArithmetic) {
  Tape tape;
  std::mt19937_64 rng(2);
  Tensor m = random_tensor({3, 3}, rng);
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 4] = 1.0;
  EXPECT_EQ(matmul(tape.constant(eye), tape.constant(m)).value(), m);
  Var r = matmul(tape.constant(Tensor({1, 2}, {1, 2})),
                 tape.constant(Tensor({2, 1}, {3, 4})));
  EXPECT_EQ(r.value(), Tensor({1, 1}, {11}));
  EXPECT_THROW(matmul(tape.constant(eye), tape.constant(Tensor({2, 3}))),
               ShapeMismatch);
}

TEST(Matmul, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    EXPECT_LT(gradcheck([](Tape&, const std::vector<Var>& v) {
                return matmul(v[0], v[1]);
              }, {random_tensor({4, 5}, rng), random_tensor({5, 3}, rng)}),
              1e-5);
  }
}

TEST(Conv2d, IdentityKernelAndCounting) {
  Tape tape;
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({1, 3, 3}, rng);
  EXPECT_EQ(conv2d(tape.constant(x), tape.constant(Tensor({1, 1, 1, 1}, 1.0)), 1, 0)
                .value(),
            x);
  Var y = conv2d(tape.constant(Tensor({1, 4, 4}, 1.0)),
                 tape.constant(Tensor({1, 1, 2, 2}, 1.0)), 2, 0);
  EXPECT_EQ(y.value(), Tensor({1, 2, 2}, 4.0));
}

TEST(Conv2d, InvalidGeometry) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 3, 3}));
  EXPECT_THROW(conv2d(x, tape.constant(Tensor({1, 1, 5, 5})), 1, 0), InvalidConfig);
  EXPECT_THROW(conv2d(x, tape.constant(Tensor({1, 2, 1, 1})), 1, 0), ShapeMismatch);
  EXPECT_THROW(conv2d(x, tape.constant(Tensor({1, 1, 1, 1})), 0, 0), InvalidConfig);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t stride = 1 + trial % 2;
    const std::size_t pad = trial % 3 == 0 ? 1 : 0;
    EXPECT_LT(gradcheck([stride, pad](Tape&, const std::vector<Var>& v) {
                return conv2d(v[0], v[1], stride, pad);
              }, {random_tensor({3, 8, 8}, rng), random_tensor({4, 3, 3, 3}, rng)}),
              1e-4);
  }
  // Batched form with a bias.
  EXPECT_LT(gradcheck([](Tape&, const std::vector<Var>& v) {
              return bias_add(conv2d(v[0], v[1], 2, 1), v[2]);
            }, {random_tensor({2, 3, 7, 7}, rng), random_tensor({4, 3, 3, 3}, rng),
                random_tensor({4}, rng)}),
            1e-4);
}

TEST(Conv2d, BatchedMatchesPerImage) {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({2, 2, 5, 5}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng);
  Tape tape;
  Tensor batched = conv2d(tape.constant(x), tape.constant(w), 2, 1).value();
  for (std::size_t n = 0; n < 2; ++n) {
    Tensor one({2, 5, 5});
    std::copy_n(x.data().begin() + n * 50, 50, one.data().begin());
    Tensor single = conv2d(tape.constant(one), tape.constant(w), 2, 1).value();
    for (std::size_t i = 0; i < single.size(); ++i) {
      EXPECT_DOUBLE_EQ(single[i], batched[n * single.size() + i]);
    }
  }
}

TEST(Activation, Definitions) {
  Tape tape;
  EXPECT_EQ(activation(Activation::relu, tape.constant(vec({-2, 3}))).value(),
            vec({0, 3}));
  EXPECT_EQ(activation(Activation::sigmoid, tape.constant(vec({0}))).value(),
            vec({0.5}));
  EXPECT_EQ(activation(Activation::leaky_relu, tape.constant(vec({-2}))).value(),
            vec({-0.02}));

  Var z = tape.variable(vec({0.0}));
  tape.backward(sum(activation(Activation::relu, z)));
  EXPECT_EQ(tape.grad(z)[0], 0.0);

  Var t = tape.variable(vec({0.0}));
  tape.backward(sum(activation(Activation::tanh, t)));
  const double h = 1e-5;
  EXPECT_NEAR(tape.grad(t)[0], 1.0, 1e-12);
  EXPECT_NEAR(tape.grad(t)[0], (std::tanh(h) - std::tanh(-h)) / (2 * h), 1e-9);
}

TEST(Activation, SigmoidSaturatesWithoutOverflow) {
  Tape tape;
  Tensor y = activation(Activation::sigmoid, tape.constant(vec({-800, 800}))).value();
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 1.0);
}

TEST(Activation, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({5, 4}, rng);
    for (Activation a : {Activation::relu, Activation::leaky_relu, Activation::sigmoid,
                         Activation::tanh, Activation::linear}) {
      EXPECT_LT(gradcheck([a](Tape&, const std::vector<Var>& v) {
                  return activation(a, v[0]);
                }, {x}),
                1e-4);
    }
  }
}

namespace {

struct BnFixture {
  ParameterStore store;
  RunningStats stats;
  explicit BnFixture(std::size_t c) {
    stats.mean = &store.add("m", Tensor({c}), false);
    stats.var = &store.add("v", Tensor({c}, 1.0), false);
  }
};

}  // namespace

TEST(BatchNorm, AlreadyNormalizedBatch) {
  BnFixture f(1);
  Tape tape;
  Var y = batch_norm(tape.constant(Tensor({2, 1}, {-1, 1})),
                     tape.constant(vec({1})), tape.constant(vec({0})), f.stats, true);
  EXPECT_NEAR(y.value()[0], -1.0, 1e-5);
  EXPECT_NEAR(y.value()[1], 1.0, 1e-5);
  // Running stats move by momentum toward mean 0 and unbiased variance 2.
  EXPECT_NEAR(f.stats.mean->value[0], 0.0, 1e-15);
  EXPECT_NEAR(f.stats.var->value[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-15);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  BnFixture f(3);
  std::mt19937_64 rng(8);
  Tape tape;
  Var y = batch_norm(tape.constant(random_tensor({4, 3, 2, 2}, rng)),
                     tape.constant(Tensor({3})), tape.constant(vec({0.1, 0.2, 0.3})),
                     f.stats, true);
  for (std::size_t i = 0; i < y.value().size(); ++i) {
    EXPECT_DOUBLE_EQ(y.value()[i], 0.1 * (1 + (i / 4) % 3));
  }
}

TEST(BatchNorm, TrainingNeedsTwoSamples) {
  BnFixture f(2);
  Tape tape;
  Var x = tape.constant(Tensor({1, 2}));
  Var g = tape.constant(Tensor({2}, 1.0));
  Var b = tape.constant(Tensor({2}));
  EXPECT_THROW(batch_norm(x, g, b, f.stats, true), InvalidConfig);
  EXPECT_NO_THROW(batch_norm(x, g, b, f.stats, false));
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    BnFixture f(3);
    const bool spatial = trial % 2 == 0;
    Shape shape = spatial ? Shape{8, 3, 2, 2} : Shape{8, 3};
    for (bool training : {true, false}) {
      EXPECT_LT(gradcheck([&f, training](Tape&, const std::vector<Var>& v) {
                  return batch_norm(v[0], v[1], v[2], f.stats, training);
                }, {random_tensor(shape, rng), random_tensor({3}, rng),
                    random_tensor({3}, rng)}),
                1e-4);
    }
  }
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Var x = tape.variable(Tensor({2, 3}, 0.5));
  tape.backward(sum(x));
  EXPECT_EQ(tape.grad(x), Tensor({2, 3}, 1.0));
}

TEST(Backward, NonScalarRootIsRejected) {
  Tape tape;
  Var x = tape.variable(Tensor({2}));
  EXPECT_THROW(tape.backward(x), NotScalar);
}

TEST(Backward, CompositionMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    EXPECT_LT(gradcheck([](Tape&, const std::vector<Var>& v) {
                return activation(Activation::sigmoid,
                                  linear(v[0], v[1], v[2]));
              }, {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng),
                  random_tensor({2}, rng)}, 1e-5, 1e-3),
              1e-5);
  }
}

TEST(Backward, DeterministicAcrossTapes) {
  std::mt19937_64 rng(11);
  Tensor a = random_tensor({6, 5}, rng);
  Tensor w = random_tensor({5, 4}, rng);
  auto run = [&]() {
    Tape tape;
    Var x = tape.variable(a);
    Var y = activation(Activation::tanh, matmul(x, tape.variable(w)));
    tape.backward(mean(square(y)));
    return tape.grad(x);
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, ParameterGradientsAccumulate) {
  Parameter p{"w", vec({2.0}), Tensor(), true};
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    Var w = tape.parameter(p);
    tape.backward(sum(square(w)));
  }
  EXPECT_EQ(p.grad[0], 8.0);
}

TEST(Reductions, MeanPerSampleAndClamp) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    EXPECT_LT(gradcheck([](Tape&, const std::vector<Var>& v) {
                return mean_per_sample(v[0]);
              }, {random_tensor({3, 2, 2}, rng)}),
              1e-4);
    EXPECT_LT(gradcheck([](Tape&, const std::vector<Var>& v) {
                return clamp(scale(v[0], 3.0), -1.0, 1.0);
              }, {random_tensor({10}, rng)}),
              1e-4);
  }
}

TEST(Reductions, ConcatAndSliceRows) {
  std::mt19937_64 rng(14);
  Tape tape;
  Var a = tape.constant(Tensor({1, 2}, {1, 2}));
  Var b = tape.constant(Tensor({2, 2}, {3, 4, 5, 6}));
  Var c = concat_rows(a, b);
  EXPECT_EQ(c.value(), Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(slice_rows(c, 1, 2).value(), b.value());
  EXPECT_THROW(concat_rows(a, tape.constant(Tensor({1, 3}))), ShapeMismatch);
  EXPECT_THROW(slice_rows(c, 2, 2), ShapeMismatch);
  for (int trial = 0; trial < 20; ++trial) {
    EXPECT_LT(gradcheck([](Tape&, const std::vector<Var>& v) {
                return slice_rows(concat_rows(v[0], v[1]), 1, 3);
              }, {random_tensor({2, 3}, rng), random_tensor({3, 3}, rng)}),
              1e-4);
  }
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  ParameterStore store;
  Parameter& p = store.add("p", vec({1.0, -2.0}));
  AdamState state;
  std::vector<Parameter*> ps = store.trainable();
  adam_step(ps, state, {});
  EXPECT_EQ(p.value, vec({1.0, -2.0}));
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
  ParameterStore store;
  Parameter& p = store.add("p", vec({0.0}));
  p.grad = vec({1.0});
  AdamState state;
  std::vector<Parameter*> ps = store.trainable();
  adam_step(ps, state, {.lr = 0.1});
  EXPECT_NEAR(p.value[0], -0.1, 1e-8);
}

TEST(Adam, MatchesScalarReference) {
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ParameterStore store;
  Parameter& p = store.add("p", vec({0.7}));
  AdamState state;
  std::vector<Parameter*> ps = store.trainable();
  double x = 0.7, m = 0.0, v = 0.0;
  for (int t = 1; t <= 10; ++t) {
    // Gradient of x^3 - x, evaluated at the current iterate.
    const double g = 3 * x * x - 1;
    p.grad = vec({3 * p.value[0] * p.value[0] - 1});
    adam_step(ps, state, {.lr = lr, .beta1 = b1, .beta2 = b2, .eps = eps});
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    EXPECT_NEAR(p.value[0], x, 1e-10);
  }
}

TEST(Adam, MisalignedStateIsRejected) {
  ParameterStore store;
  store.add("a", vec({1.0}));
  AdamState state;
  state.step = 3;
  state.m = {vec({0.0}), vec({0.0})};
  state.v = state.m;
  std::vector<Parameter*> ps = store.trainable();
  EXPECT_THROW(adam_step(ps, state, {}), ShapeMismatch);
}

TEST(Clip, BelowThresholdUnchanged) {
  ParameterStore store;
  Parameter& p = store.add("p", vec({0, 0}));
  p.grad = vec({0.3, 0.0});
  std::vector<Parameter*> ps = store.trainable();
  clip_grad_l2(ps, 0.5);
  EXPECT_EQ(p.grad, vec({0.3, 0.0}));
}

TEST(Clip, ScalesToMaxNorm) {
  ParameterStore store;
  Parameter& p = store.add("p", vec({0, 0}));
  p.grad = vec({3, 4});
  std::vector<Parameter*> ps = store.trainable();
  EXPECT_DOUBLE_EQ(clip_grad_l2(ps, 0.5), 5.0);
  EXPECT_NEAR(p.grad[0], 0.3, 1e-15);
  EXPECT_NEAR(p.grad[1], 0.4, 1e-15);
}

TEST(Clip, RandomGlobalNormBounded) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    ParameterStore store;
    for (int k = 0; k < 3; ++k) {
      Parameter& p = store.add("p" + std::to_string(k), Tensor({4}));
      p.grad = random_tensor({4}, rng, -3, 3);
    }
    std::vector<Parameter*> ps = store.trainable();
    clip_grad_l2(ps, 0.5);
    EXPECT_LE(grad_l2_norm(ps), 0.5 + 1e-12);
  }
}

TEST(Checkpoint, RoundTripAndLayout) {
  ParameterStore store;
  store.add("enc.w", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  store.add("bn.mean", vec({0.25}), false);
  std::stringstream buf;
  std::vector<const Parameter*> ps = std::as_const(store).all();
  write_parameters(buf, ps);
  const std::string bytes = buf.str();
  ASSERT_EQ(bytes.substr(0, 6), "CURIO1");
  // 6 magic + (4 + 5 + 4 + 8 + 48) + (4 + 7 + 4 + 4 + 8)
  EXPECT_EQ(bytes.size(), 6u + 69u + 27u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 5u);

  ParameterStore other;
  other.add("enc.w", Tensor({2, 3}));
  other.add("bn.mean", Tensor({1}), false);
  std::stringstream in(bytes);
  assign_parameters(other, read_parameters(in));
  EXPECT_EQ(other.find("enc.w")->value, store.find("enc.w")->value);
  EXPECT_EQ(other.find("bn.mean")->value[0], 0.25);
}

TEST(Checkpoint, TruncationAndBadMagic) {
  ParameterStore store;
  store.add("w", Tensor({4}, 1.0));
  std::stringstream buf;
  std::vector<const Parameter*> ps = std::as_const(store).all();
  write_parameters(buf, ps);
  std::string bytes = buf.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_parameters(cut), FormatError);
  std::stringstream bad("NOTCUR");
  EXPECT_THROW(read_parameters(bad), FormatError);
}
