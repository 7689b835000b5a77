#pragma once

#include <cstddef>

#include "curio/autodiff/tape.hpp"

namespace curio {

enum class ElementwiseOp { add, sub, mul, div, neg, exp, square, sqrt };

/// Unary forms: neg, exp, square, sqrt. Binary forms: add, sub, mul, div,
/// where `b` has the shape of `a` or holds a single element.
Var elementwise(ElementwiseOp op, Var a);
Var elementwise(ElementwiseOp op, Var a, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// Throws NumericError if any divisor is zero.
Var div(Var a, Var b);
Var neg(Var a);
Var exp(Var a);
Var square(Var a);
/// Throws NumericError for negative input. The derivative at 0 is reported
/// as a NumericError during backward rather than as Inf.
Var sqrt(Var a);

Var scale(Var a, double s);
Var add_scalar(Var a, double s);

/// Element-wise clamp to [lo, hi]; gradient passes only strictly inside.
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);
/// [B, ...] -> [B]: mean over all non-leading axes.
Var mean_per_sample(Var a);

Var reshape(Var a, Shape shape);

/// Stacks along the leading axis; trailing shapes must agree.
Var concat_rows(Var a, Var b);
/// Rows [begin, begin+count) of the leading axis.
Var slice_rows(Var a, std::size_t begin, std::size_t count);

/// [m,k] x [k,n] -> [m,n].
Var matmul(Var a, Var b);

/// Adds b[C] along axis 1 of x[B,C,...].
Var bias_add(Var x, Var b);

/// x[B,in] * w[in,out] + b[out].
Var linear(Var x, Var w, Var b);

/// Cross-correlation. x is [C_in,H,W] or [B,C_in,H,W]; w is
/// [C_out,C_in,k,k]. The result keeps the rank of x.
Var conv2d(Var x, Var w, std::size_t stride, std::size_t pad);

/// Output side length of a convolution, or 0 if the window never fits.
std::size_t conv_output_size(std::size_t in, std::size_t k, std::size_t stride,
                             std::size_t pad);

enum class Activation { relu, leaky_relu, sigmoid, tanh, linear };

inline constexpr double kLeakySlope = 0.01;

Var activation(Activation kind, Var x);

/// Per-channel running statistics, kept as non-trainable parameters so they
/// travel with checkpoints.
struct RunningStats {
  Parameter* mean = nullptr;
  Parameter* var = nullptr;
  double momentum = 0.1;
};

inline constexpr double kBatchNormEps = 1e-5;

/// x is [B,C] or [B,C,H,W]; gamma and beta are [C]. Training mode uses batch
/// statistics (biased variance for normalization, unbiased for the running
/// update) and requires B >= 2; eval mode uses the running statistics.
Var batch_norm(Var x, Var gamma, Var beta, RunningStats& stats, bool training);

}  // namespace curio
