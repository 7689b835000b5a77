#include <cmath>
#include <memory>

#include "curio/errors.hpp"
#include "curio/train/train.hpp"

namespace curio::train {

std::vector<double> gaussian_kernel(std::size_t size, double sigma) {
  if (size == 0 || size % 2 == 0) {
    throw InvalidConfig("blur kernel size must be odd, got " + std::to_string(size));
  }
  if (!(sigma > 0.0)) throw InvalidConfig("blur sigma must be positive");
  std::vector<double> k(size);
  const double c = static_cast<double>(size / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double x = static_cast<double>(i) - c;
    k[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    total += k[i];
  }
  for (double& v : k) v /= total;
  return k;
}

namespace {

// n x n operator of one blur pass with reflect padding (edge not repeated):
// out[i] = sum_j M[i][j] in[j].
std::vector<double> blur_matrix(std::size_t n, std::size_t size, double sigma) {
  const std::vector<double> k = gaussian_kernel(size, sigma);
  const long half = static_cast<long>(size / 2);
  if (n < 2 || half >= static_cast<long>(n)) {
    throw InvalidConfig("image too small for a " + std::to_string(size) + "-tap blur");
  }
  const long last = static_cast<long>(n) - 1;
  std::vector<double> m(n * n, 0.0);
  for (long i = 0; i <= last; ++i) {
    for (long t = -half; t <= half; ++t) {
      long j = i + t;
      if (j < 0) j = -j;
      if (j > last) j = 2 * last - j;
      m[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)] +=
          k[static_cast<std::size_t>(t + half)];
    }
  }
  return m;
}

// Applies rows then columns to every h x w plane; `transpose` uses the
// adjoint operators.
void blur_planes(const double* in, double* out, std::size_t planes, std::size_t h, std::size_t w,
                 const std::vector<double>& mh, const std::vector<double>& mw, bool transpose) {
  std::vector<double> tmp(h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = in + p * h * w;
    double* dst = out + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (std::size_t j = 0; j < w; ++j) {
          s += (transpose ? mw[j * w + x] : mw[x * w + j]) * src[y * w + j];
        }
        tmp[y * w + x] = s;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
          s += (transpose ? mh[j * h + y] : mh[y * h + j]) * tmp[j * w + x];
        }
        dst[y * w + x] = s;
      }
    }
  }
}

}  // namespace

render::Image gaussian_blur(const render::Image& img, std::size_t size, double sigma) {
  const auto mh = blur_matrix(img.height, size, sigma);
  const auto mw = blur_matrix(img.width, size, sigma);
  // Work channel-planar, then interleave back.
  const std::size_t h = img.height, w = img.width, c = img.channels;
  std::vector<double> planar(h * w * c), blurred(h * w * c);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) planar[ch * h * w + i] = img.data[i * c + ch];
  }
  blur_planes(planar.data(), blurred.data(), c, h, w, mh, mw, false);
  render::Image out(h, w, c);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) out.data[i * c + ch] = blurred[ch * h * w + i];
  }
  return out;
}

Var gaussian_blur(Var images, std::size_t size, double sigma) {
  const Shape s = images.shape();
  if (s.size() != 4) throw ShapeMismatch("blur expects [B,C,H,W], got " + shape_string(s));
  auto mh = std::make_shared<std::vector<double>>(blur_matrix(s[2], size, sigma));
  auto mw = std::make_shared<std::vector<double>>(blur_matrix(s[3], size, sigma));
  Tensor out(s);
  blur_planes(images.value().data().data(), out.data().data(), s[0] * s[1], s[2], s[3], *mh, *mw,
              false);
  return images.tape().record("gaussian_blur", std::move(out), {images},
                              [mh, mw, s](BackwardContext& ctx) {
                                Tensor g(s);
                                blur_planes(ctx.grad_out().data().data(), g.data().data(),
                                            s[0] * s[1], s[2], s[3], *mh, *mw, true);
                                ctx.grad(0).axpy(1.0, g);
                              });
}

}  // namespace curio::train
