#include "curio/autodiff/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>

#include "curio/errors.hpp"

namespace curio {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

const char* op_name(ElementwiseOp op) {
  switch (op) {
    case ElementwiseOp::add: return "add";
    case ElementwiseOp::sub: return "sub";
    case ElementwiseOp::mul: return "mul";
    case ElementwiseOp::div: return "div";
    case ElementwiseOp::neg: return "neg";
    case ElementwiseOp::exp: return "exp";
    case ElementwiseOp::square: return "square";
    case ElementwiseOp::sqrt: return "sqrt";
  }
  return "?";
}

bool is_binary(ElementwiseOp op) {
  return op == ElementwiseOp::add || op == ElementwiseOp::sub ||
         op == ElementwiseOp::mul || op == ElementwiseOp::div;
}

// Applies `fn(index)` for every element of `out`.
template <typename Fn>
Tensor map_values(const Tensor& like, Fn fn) {
  Tensor out = Tensor::zeros_like(like);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(i);
  return out;
}

}  // namespace

Var elementwise(ElementwiseOp op, Var a) {
  if (is_binary(op)) {
    throw InvalidConfig(std::string(op_name(op)) + " needs two operands");
  }
  const Tensor& x = a.value();
  Tensor out;
  switch (op) {
    case ElementwiseOp::neg:
      out = map_values(x, [&](std::size_t i) { return -x[i]; });
      return a.tape().record("neg", std::move(out), {a}, [](BackwardContext& c) {
        c.grad(0).axpy(-1.0, c.grad_out());
      });
    case ElementwiseOp::exp:
      out = map_values(x, [&](std::size_t i) { return std::exp(x[i]); });
      return a.tape().record("exp", std::move(out), {a}, [](BackwardContext& c) {
        Tensor& g = c.grad(0);
        const Tensor& y = c.output();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c.grad_out()[i] * y[i];
      });
    case ElementwiseOp::square:
      out = map_values(x, [&](std::size_t i) { return x[i] * x[i]; });
      return a.tape().record(
          "square", std::move(out), {a}, [](BackwardContext& c) {
            Tensor& g = c.grad(0);
            const Tensor& in = c.input(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
              g[i] += 2.0 * in[i] * c.grad_out()[i];
            }
          });
    case ElementwiseOp::sqrt:
      for (double v : x.data()) {
        if (v < 0.0) throw NumericError("sqrt of a negative value");
      }
      out = map_values(x, [&](std::size_t i) { return std::sqrt(x[i]); });
      return a.tape().record("sqrt", std::move(out), {a}, [](BackwardContext& c) {
        Tensor& g = c.grad(0);
        const Tensor& y = c.output();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (y[i] == 0.0) throw NumericError("sqrt derivative at 0");
          g[i] += c.grad_out()[i] * 0.5 / y[i];
        }
      });
    default:
      break;
  }
  throw InvalidConfig("unsupported unary op");
}

Var elementwise(ElementwiseOp op, Var a, Var b) {
  if (!is_binary(op)) {
    throw InvalidConfig(std::string(op_name(op)) + " takes one operand");
  }
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool broadcast = y.size() == 1 && x.size() != 1;
  if (!broadcast && x.shape() != y.shape()) {
    throw ShapeMismatch(std::string(op_name(op)) + " of " +
                        shape_string(x.shape()) + " and " +
                        shape_string(y.shape()));
  }
  auto yi = [broadcast](const Tensor& t, std::size_t i) {
    return broadcast ? t[0] : t[i];
  };
  Tensor out;
  switch (op) {
    case ElementwiseOp::add:
      out = map_values(x, [&](std::size_t i) { return x[i] + yi(y, i); });
      break;
    case ElementwiseOp::sub:
      out = map_values(x, [&](std::size_t i) { return x[i] - yi(y, i); });
      break;
    case ElementwiseOp::mul:
      out = map_values(x, [&](std::size_t i) { return x[i] * yi(y, i); });
      break;
    case ElementwiseOp::div:
      for (double v : y.data()) {
        if (v == 0.0) throw NumericError("division by zero");
      }
      out = map_values(x, [&](std::size_t i) { return x[i] / yi(y, i); });
      break;
    default:
      break;
  }
  return a.tape().record(
      op_name(op), std::move(out), {a, b},
      [op, broadcast](BackwardContext& c) {
        const Tensor& g = c.grad_out();
        const Tensor& x = c.input(0);
        const Tensor& y = c.input(1);
        auto yv = [&](std::size_t i) { return broadcast ? y[0] : y[i]; };
        if (c.needs_grad(0)) {
          Tensor& gx = c.grad(0);
          for (std::size_t i = 0; i < gx.size(); ++i) {
            switch (op) {
              case ElementwiseOp::add:
              case ElementwiseOp::sub: gx[i] += g[i]; break;
              case ElementwiseOp::mul: gx[i] += g[i] * yv(i); break;
              case ElementwiseOp::div: gx[i] += g[i] / yv(i); break;
              default: break;
            }
          }
        }
        if (c.needs_grad(1)) {
          Tensor& gy = c.grad(1);
          for (std::size_t i = 0; i < x.size(); ++i) {
            double d = 0.0;
            switch (op) {
              case ElementwiseOp::add: d = g[i]; break;
              case ElementwiseOp::sub: d = -g[i]; break;
              case ElementwiseOp::mul: d = g[i] * x[i]; break;
              case ElementwiseOp::div: d = -g[i] * x[i] / (yv(i) * yv(i)); break;
              default: break;
            }
            gy[broadcast ? 0 : i] += d;
          }
        }
      });
}

Var add(Var a, Var b) { return elementwise(ElementwiseOp::add, a, b); }
Var sub(Var a, Var b) { return elementwise(ElementwiseOp::sub, a, b); }
Var mul(Var a, Var b) { return elementwise(ElementwiseOp::mul, a, b); }
Var div(Var a, Var b) { return elementwise(ElementwiseOp::div, a, b); }
Var neg(Var a) { return elementwise(ElementwiseOp::neg, a); }
Var exp(Var a) { return elementwise(ElementwiseOp::exp, a); }
Var square(Var a) { return elementwise(ElementwiseOp::square, a); }
Var sqrt(Var a) { return elementwise(ElementwiseOp::sqrt, a); }

Var scale(Var a, double s) {
  const Tensor& x = a.value();
  Tensor out = map_values(x, [&](std::size_t i) { return s * x[i]; });
  return a.tape().record("scale", std::move(out), {a},
                         [s](BackwardContext& c) { c.grad(0).axpy(s, c.grad_out()); });
}

Var add_scalar(Var a, double s) {
  const Tensor& x = a.value();
  Tensor out = map_values(x, [&](std::size_t i) { return x[i] + s; });
  return a.tape().record("add_scalar", std::move(out), {a}, [](BackwardContext& c) {
    c.grad(0).axpy(1.0, c.grad_out());
  });
}

Var clamp(Var a, double lo, double hi) {
  const Tensor& x = a.value();
  Tensor out =
      map_values(x, [&](std::size_t i) { return std::clamp(x[i], lo, hi); });
  return a.tape().record("clamp", std::move(out), {a}, [lo, hi](BackwardContext& c) {
    Tensor& g = c.grad(0);
    const Tensor& in = c.input(0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in[i] > lo && in[i] < hi) g[i] += c.grad_out()[i];
    }
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.tape().record("sum", Tensor::scalar(total), {a}, [](BackwardContext& c) {
    Tensor& g = c.grad(0);
    const double go = c.grad_out()[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeMismatch("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var mean_per_sample(Var a) {
  const Tensor& x = a.value();
  if (x.rank() < 1 || x.dim(0) == 0) {
    throw ShapeMismatch("mean_per_sample needs a leading batch axis");
  }
  const std::size_t batch = x.dim(0);
  const std::size_t inner = x.size() / batch;
  Tensor out({batch});
  for (std::size_t b = 0; b < batch; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < inner; ++i) s += x[b * inner + i];
    out[b] = s / static_cast<double>(inner);
  }
  return a.tape().record(
      "mean_per_sample", std::move(out), {a}, [batch, inner](BackwardContext& c) {
        Tensor& g = c.grad(0);
        for (std::size_t b = 0; b < batch; ++b) {
          const double go = c.grad_out()[b] / static_cast<double>(inner);
          for (std::size_t i = 0; i < inner; ++i) g[b * inner + i] += go;
        }
      });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(out), {a}, [](BackwardContext& c) {
    c.grad(0).axpy(1.0, c.grad_out());
  });
}

Var concat_rows(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() < 1 || x.rank() != y.rank() ||
      !std::equal(x.shape().begin() + 1, x.shape().end(), y.shape().begin() + 1)) {
    throw ShapeMismatch("concat_rows of " + shape_string(x.shape()) + " and " +
                        shape_string(y.shape()));
  }
  Shape shape = x.shape();
  shape[0] += y.dim(0);
  std::vector<double> data(x.storage());
  data.insert(data.end(), y.storage().begin(), y.storage().end());
  const std::size_t split = x.size();
  return a.tape().record(
      "concat_rows", Tensor(std::move(shape), std::move(data)), {a, b},
      [split](BackwardContext& c) {
        const Tensor& g = c.grad_out();
        if (c.needs_grad(0)) {
          Tensor& ga = c.grad(0);
          for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
        }
        if (c.needs_grad(1)) {
          Tensor& gb = c.grad(1);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[split + i];
        }
      });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& x = a.value();
  if (x.rank() < 1 || begin + count > x.dim(0) || count == 0) {
    throw ShapeMismatch("slice_rows [" + std::to_string(begin) + ", " +
                        std::to_string(begin + count) + ") of " +
                        shape_string(x.shape()));
  }
  const std::size_t row = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = count;
  std::vector<double> data(x.storage().begin() + static_cast<long>(begin * row),
                           x.storage().begin() + static_cast<long>((begin + count) * row));
  return a.tape().record(
      "slice_rows", Tensor(std::move(shape), std::move(data)), {a},
      [offset = begin * row](BackwardContext& c) {
        Tensor& g = c.grad(0);
        const Tensor& go = c.grad_out();
        for (std::size_t i = 0; i < go.size(); ++i) g[offset + i] += go[i];
      });
}

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    throw ShapeMismatch("matmul of " + shape_string(x.shape()) + " and " +
                        shape_string(y.shape()));
  }
  const auto m = static_cast<Eigen::Index>(x.dim(0));
  const auto k = static_cast<Eigen::Index>(x.dim(1));
  const auto n = static_cast<Eigen::Index>(y.dim(1));
  Tensor out({x.dim(0), y.dim(1)});
  MatMap(out.data().data(), m, n).noalias() =
      ConstMatMap(x.data().data(), m, k) * ConstMatMap(y.data().data(), k, n);
  return a.tape().record("matmul", std::move(out), {a, b}, [m, k, n](BackwardContext& c) {
    ConstMatMap g(c.grad_out().data().data(), m, n);
    if (c.needs_grad(0)) {
      MatMap(c.grad(0).data().data(), m, k).noalias() +=
          g * ConstMatMap(c.input(1).data().data(), k, n).transpose();
    }
    if (c.needs_grad(1)) {
      MatMap(c.grad(1).data().data(), k, n).noalias() +=
          ConstMatMap(c.input(0).data().data(), m, k).transpose() * g;
    }
  });
}

Var bias_add(Var x, Var b) {
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (xv.rank() < 2 || bv.rank() != 1 || xv.dim(1) != bv.dim(0)) {
    throw ShapeMismatch("bias_add of " + shape_string(xv.shape()) + " and " +
                        shape_string(bv.shape()));
  }
  const std::size_t batch = xv.dim(0);
  const std::size_t channels = xv.dim(1);
  const std::size_t inner = xv.size() / (batch * channels);
  Tensor out = xv;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t ch = 0; ch < channels; ++ch) {
      double* row = out.data().data() + (n * channels + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) row[i] += bv[ch];
    }
  }
  return x.tape().record(
      "bias_add", std::move(out), {x, b},
      [batch, channels, inner](BackwardContext& c) {
        const Tensor& g = c.grad_out();
        if (c.needs_grad(0)) c.grad(0).axpy(1.0, g);
        if (c.needs_grad(1)) {
          Tensor& gb = c.grad(1);
          for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t ch = 0; ch < channels; ++ch) {
              const double* row = g.data().data() + (n * channels + ch) * inner;
              double s = 0.0;
              for (std::size_t i = 0; i < inner; ++i) s += row[i];
              gb[ch] += s;
            }
          }
        }
      });
}

Var linear(Var x, Var w, Var b) { return bias_add(matmul(x, w), b); }

std::size_t conv_output_size(std::size_t in, std::size_t k, std::size_t stride,
                             std::size_t pad) {
  if (stride == 0 || k == 0 || in + 2 * pad < k) return 0;
  return (in + 2 * pad - k) / stride + 1;
}

namespace {

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, k, stride, pad, oh, ow;
  std::size_t patch() const { return cin * k * k; }
  std::size_t positions() const { return oh * ow; }
};

// cols is [cin*k*k, oh*ow] row-major for one image.
void im2col(const ConvGeometry& g, const double* img, double* cols) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx, ++row) {
        double* out = cols + row * g.positions();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) -
                          static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) -
                            static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 &&
                                iy < static_cast<long>(g.h) &&
                                ix < static_cast<long>(g.w);
            out[oy * g.ow + ox] =
                inside ? img[(c * g.h + static_cast<std::size_t>(iy)) * g.w +
                             static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* img) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx, ++row) {
        const double* in = cols + row * g.positions();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) -
                          static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) -
                            static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            img[(c * g.h + static_cast<std::size_t>(iy)) * g.w +
                static_cast<std::size_t>(ix)] += in[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var x, Var w, std::size_t stride, std::size_t pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const bool batched = xv.rank() == 4;
  if ((xv.rank() != 3 && !batched) || wv.rank() != 4 || wv.dim(2) != wv.dim(3)) {
    throw ShapeMismatch("conv2d of " + shape_string(xv.shape()) + " with kernel " +
                        shape_string(wv.shape()));
  }
  ConvGeometry g{};
  g.batch = batched ? xv.dim(0) : 1;
  g.cin = xv.dim(batched ? 1 : 0);
  g.h = xv.dim(batched ? 2 : 1);
  g.w = xv.dim(batched ? 3 : 2);
  g.cout = wv.dim(0);
  g.k = wv.dim(2);
  g.stride = stride;
  g.pad = pad;
  if (wv.dim(1) != g.cin) {
    throw ShapeMismatch("conv2d kernel expects " + std::to_string(wv.dim(1)) +
                        " input channels, got " + std::to_string(g.cin));
  }
  if (stride == 0) throw InvalidConfig("conv2d stride must be >= 1");
  g.oh = conv_output_size(g.h, g.k, stride, pad);
  g.ow = conv_output_size(g.w, g.k, stride, pad);
  if (g.oh == 0 || g.ow == 0) {
    throw InvalidConfig("conv2d with kernel " + std::to_string(g.k) + ", stride " +
                        std::to_string(stride) + ", pad " + std::to_string(pad) +
                        " yields an empty output for " + shape_string(xv.shape()));
  }

  const auto patch = static_cast<Eigen::Index>(g.patch());
  const auto npos = static_cast<Eigen::Index>(g.positions());
  const auto cout = static_cast<Eigen::Index>(g.cout);
  auto cols = std::make_shared<std::vector<double>>(g.batch * g.patch() *
                                                    g.positions());
  Shape out_shape = batched ? Shape{g.batch, g.cout, g.oh, g.ow}
                            : Shape{g.cout, g.oh, g.ow};
  Tensor out(out_shape);
  ConstMatMap wm(wv.data().data(), cout, patch);
  const std::size_t in_stride = g.cin * g.h * g.w;
  const std::size_t out_stride = g.cout * g.positions();
  const std::size_t col_stride = g.patch() * g.positions();
  for (std::size_t n = 0; n < g.batch; ++n) {
    double* cn = cols->data() + n * col_stride;
    im2col(g, xv.data().data() + n * in_stride, cn);
    MatMap(out.data().data() + n * out_stride, cout, npos).noalias() =
        wm * ConstMatMap(cn, patch, npos);
  }
  return x.tape().record(
      "conv2d", std::move(out), {x, w},
      [g, cols, patch, npos, cout, in_stride, out_stride,
       col_stride](BackwardContext& c) {
        const double* go = c.grad_out().data().data();
        ConstMatMap wm(c.input(1).data().data(), cout, patch);
        std::vector<double> dcols;
        if (c.needs_grad(0)) dcols.resize(col_stride);
        for (std::size_t n = 0; n < g.batch; ++n) {
          ConstMatMap gn(go + n * out_stride, cout, npos);
          if (c.needs_grad(1)) {
            MatMap(c.grad(1).data().data(), cout, patch).noalias() +=
                gn * ConstMatMap(cols->data() + n * col_stride, patch, npos)
                         .transpose();
          }
          if (c.needs_grad(0)) {
            MatMap(dcols.data(), patch, npos).noalias() = wm.transpose() * gn;
            col2im_add(g, dcols.data(), c.grad(0).data().data() + n * in_stride);
          }
        }
      });
}

Var activation(Activation kind, Var x) {
  const Tensor& v = x.value();
  switch (kind) {
    case Activation::linear:
      return x;
    case Activation::relu:
    case Activation::leaky_relu: {
      const double slope = kind == Activation::relu ? 0.0 : kLeakySlope;
      Tensor out = map_values(
          v, [&](std::size_t i) { return v[i] > 0.0 ? v[i] : slope * v[i]; });
      return x.tape().record(kind == Activation::relu ? "relu" : "leaky_relu",
                             std::move(out), {x}, [slope](BackwardContext& c) {
                               Tensor& g = c.grad(0);
                               const Tensor& in = c.input(0);
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 g[i] += c.grad_out()[i] * (in[i] > 0.0 ? 1.0 : slope);
                               }
                             });
    }
    case Activation::sigmoid: {
      Tensor out = map_values(v, [&](std::size_t i) {
        // Split by sign so neither branch overflows.
        if (v[i] >= 0.0) return 1.0 / (1.0 + std::exp(-v[i]));
        const double e = std::exp(v[i]);
        return e / (1.0 + e);
      });
      return x.tape().record("sigmoid", std::move(out), {x}, [](BackwardContext& c) {
        Tensor& g = c.grad(0);
        const Tensor& y = c.output();
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += c.grad_out()[i] * y[i] * (1.0 - y[i]);
        }
      });
    }
    case Activation::tanh: {
      Tensor out = map_values(v, [&](std::size_t i) { return std::tanh(v[i]); });
      return x.tape().record("tanh", std::move(out), {x}, [](BackwardContext& c) {
        Tensor& g = c.grad(0);
        const Tensor& y = c.output();
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += c.grad_out()[i] * (1.0 - y[i] * y[i]);
        }
      });
    }
  }
  throw InvalidConfig("unknown activation");
}

Var batch_norm(Var x, Var gamma, Var beta, RunningStats& stats, bool training) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 && xv.rank() != 4) {
    throw ShapeMismatch("batch_norm expects [B,C] or [B,C,H,W], got " +
                        shape_string(xv.shape()));
  }
  const std::size_t batch = xv.dim(0);
  const std::size_t channels = xv.dim(1);
  const std::size_t inner = xv.size() / (batch * channels);
  if (gamma.value().shape() != Shape{channels} ||
      beta.value().shape() != Shape{channels}) {
    throw ShapeMismatch("batch_norm affine parameters must be [" +
                        std::to_string(channels) + "]");
  }
  if (stats.mean == nullptr || stats.var == nullptr ||
      stats.mean->value.size() != channels || stats.var->value.size() != channels) {
    throw ShapeMismatch("batch_norm running statistics do not match channels");
  }
  if (training && batch < 2) {
    throw InvalidConfig("batch_norm in training mode needs a batch of at least 2");
  }

  const double count = static_cast<double>(batch * inner);
  auto at = [&](std::size_t n, std::size_t ch) {
    return (n * channels + ch) * inner;
  };

  std::vector<double> mu(channels), inv_std(channels);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    if (training) {
      double s = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t i = 0; i < inner; ++i) s += xv[at(n, ch) + i];
      }
      const double m = s / count;
      double ss = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = xv[at(n, ch) + i] - m;
          ss += d * d;
        }
      }
      const double var = ss / count;
      mu[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(var + kBatchNormEps);
      const double unbiased = ss / (count - 1.0);
      double& rm = stats.mean->value[ch];
      double& rv = stats.var->value[ch];
      rm = (1.0 - stats.momentum) * rm + stats.momentum * m;
      rv = (1.0 - stats.momentum) * rv + stats.momentum * unbiased;
    } else {
      mu[ch] = stats.mean->value[ch];
      inv_std[ch] = 1.0 / std::sqrt(stats.var->value[ch] + kBatchNormEps);
    }
  }

  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor xhat = Tensor::zeros_like(xv);
  Tensor out = Tensor::zeros_like(xv);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t ch = 0; ch < channels; ++ch) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t j = at(n, ch) + i;
        xhat[j] = (xv[j] - mu[ch]) * inv_std[ch];
        out[j] = gv[ch] * xhat[j] + bv[ch];
      }
    }
  }

  return x.tape().record(
      training ? "batch_norm" : "batch_norm_eval", std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), batch, channels, inner,
       count, training](BackwardContext& c) {
        const Tensor& g = c.grad_out();
        const Tensor& gv = c.input(1);
        auto at = [&](std::size_t n, std::size_t ch) {
          return (n * channels + ch) * inner;
        };
        for (std::size_t ch = 0; ch < channels; ++ch) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t j = at(n, ch) + i;
              sum_g += g[j];
              sum_gx += g[j] * xhat[j];
            }
          }
          if (c.needs_grad(1)) c.grad(1)[ch] += sum_gx;
          if (c.needs_grad(2)) c.grad(2)[ch] += sum_g;
          if (!c.needs_grad(0)) continue;
          Tensor& gx = c.grad(0);
          const double k = gv[ch] * inv_std[ch];
          for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t j = at(n, ch) + i;
              if (training) {
                gx[j] += k * (g[j] - sum_g / count - xhat[j] * sum_gx / count);
              } else {
                gx[j] += k * g[j];
              }
            }
          }
        }
      });
}

}  // namespace curio
