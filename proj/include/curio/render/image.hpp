#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "curio/autodiff/tensor.hpp"

namespace curio::render {

/// H x W x C float image, row-major with interleaved channels, values in
/// [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c = 3, double fill = 0.0)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

/// HWC image -> [3,H,W] tensor, or into row `index` of a [B,3,H,W] batch.
Tensor to_chw(const Image& img);
void copy_to_batch(const Image& img, Tensor& batch, std::size_t index);
/// Row `index` of a [B,3,H,W] batch (or a [3,H,W] tensor) -> HWC image.
Image from_chw(const Tensor& t, std::size_t index = 0);

/// 8-bit quantization used for PNG output: round(clamp(v,0,1) * 255).
std::uint8_t quantize(double v);

/// Encodes an 8-bit RGB PNG.
std::vector<std::uint8_t> encode_png(const Image& img);
/// Decodes any PNG to RGB; alpha is dropped. Throws FormatError.
Image decode_png(const std::vector<std::uint8_t>& bytes);

/// Throws IoError.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

/// Images placed left to right; heights must match.
Image side_by_side(const Image& a, const Image& b);

}  // namespace curio::render
