#include "curio/render/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "curio/errors.hpp"

namespace curio::render {

Tensor to_chw(const Image& img) {
  Tensor t({img.channels, img.height, img.width});
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) {
        t[(c * img.height + y) * img.width + x] = img.at(y, x, c);
      }
    }
  }
  return t;
}

void copy_to_batch(const Image& img, Tensor& batch, std::size_t index) {
  if (batch.rank() != 4 || batch.dim(1) != img.channels || batch.dim(2) != img.height ||
      batch.dim(3) != img.width || index >= batch.dim(0)) {
    throw ShapeMismatch("image " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + " does not fit batch " +
                        shape_string(batch.shape()));
  }
  const std::size_t plane = img.height * img.width;
  double* dst = batch.data().data() + index * img.channels * plane;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        dst[c * plane + y * img.width + x] = img.at(y, x, c);
      }
    }
  }
}

Image from_chw(const Tensor& t, std::size_t index) {
  const bool batched = t.rank() == 4;
  if (!batched && t.rank() != 3) {
    throw ShapeMismatch("from_chw expects [3,H,W] or [B,3,H,W], got " +
                        shape_string(t.shape()));
  }
  const std::size_t off = batched ? 1 : 0;
  Image img(t.dim(off + 1), t.dim(off + 2), t.dim(off));
  const std::size_t plane = img.height * img.width;
  const double* src = t.data().data() + (batched ? index * img.channels * plane : 0);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) {
        img.at(y, x, c) = src[c * plane + y * img.width + x];
      }
    }
  }
  return img;
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.channels != 3) throw ShapeMismatch("PNG export expects 3 channels");
  std::vector<std::uint8_t> pixels(img.data.size());
  std::transform(img.data.begin(), img.data.end(), pixels.begin(), quantize);
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width);
  desc.height = static_cast<png_uint_32>(img.height);
  desc.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encoding failed: ") + desc.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encoding failed: ") + desc.message);
  }
  out.resize(size);
  return out;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size())) {
    throw FormatError(std::string("not a readable PNG: ") + desc.message);
  }
  desc.format = PNG_FORMAT_RGB;  // alpha is dropped, gray expanded
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(desc));
  if (!png_image_finish_read(&desc, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&desc);
    throw FormatError(std::string("corrupt PNG: ") + desc.message);
  }
  Image img(desc.height, desc.width, 3);
  for (std::size_t i = 0; i < pixels.size(); ++i) img.data[i] = pixels[i] / 255.0;
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  const std::vector<std::uint8_t> bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

Image read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

Image side_by_side(const Image& a, const Image& b) {
  if (a.height != b.height || a.channels != b.channels) {
    throw ShapeMismatch("side_by_side needs equal heights and channels");
  }
  Image out(a.height, a.width + b.width, a.channels);
  for (std::size_t y = 0; y < a.height; ++y) {
    for (std::size_t c = 0; c < a.channels; ++c) {
      for (std::size_t x = 0; x < a.width; ++x) out.at(y, x, c) = a.at(y, x, c);
      for (std::size_t x = 0; x < b.width; ++x) out.at(y, a.width + x, c) = b.at(y, x, c);
    }
  }
  return out;
}

}  // namespace curio::render
