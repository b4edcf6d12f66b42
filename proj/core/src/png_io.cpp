#include "fcis/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "fcis/errors.hpp"

namespace fcis {

namespace {

[[noreturn]] void fail(const std::string& verb, const std::string& path, const png_image& img) {
  throw DataError(verb + " " + path + ": " + img.message);
}

}  // namespace

void write_png_rgb8(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("write_png_rgb8 wants a [3, H, W] tensor");
  }
  const int h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> rows(static_cast<std::size_t>(h) * w * 3);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        rows[(static_cast<std::size_t>(y) * w + x) * 3 + c] = quantize8(image.at(c, y, x));
      }
    }
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, rows.data(), 3 * w, nullptr)) {
    fail("failed to write", path, img);
  }
}

Tensor<float> read_png_rgb8(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) fail("failed to read", path, img);
  img.format = PNG_FORMAT_RGB;
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  std::vector<std::uint8_t> rows(static_cast<std::size_t>(h) * w * 3);
  if (!png_image_finish_read(&img, nullptr, rows.data(), 0, nullptr)) {
    fail("failed to decode", path, img);
  }
  Tensor<float> out({3, h, w});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out.at(c, y, x) = rows[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
      }
    }
  }
  return out;
}

void write_png_gray8(const std::string& path, const std::vector<std::uint8_t>& pixels,
                     int height, int width) {
  if (height <= 0 || width <= 0 ||
      pixels.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("write_png_gray8: pixel buffer does not match extent");
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, pixels.data(), width, nullptr)) {
    fail("failed to write", path, img);
  }
}

std::vector<std::uint8_t> read_png_gray8(const std::string& path, int& height, int& width) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) fail("failed to read", path, img);
  img.format = PNG_FORMAT_GRAY;
  height = static_cast<int>(img.height);
  width = static_cast<int>(img.width);
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(height) * width);
  if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
    fail("failed to decode", path, img);
  }
  return pixels;
}

}  // namespace fcis
