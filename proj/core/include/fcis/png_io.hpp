#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fcis/tensor.hpp"

namespace fcis {

// The one quantizer used for image bytes everywhere, so in-memory pixel
// values and PNG round trips agree exactly.
inline std::uint8_t quantize8(float v) {
  if (!(v > 0.0f)) return 0;  // also catches NaN
  if (v >= 1.0f) return 255;
  return static_cast<std::uint8_t>(v * 255.0f + 0.5f);
}

// 8-bit RGB file from a [3, H, W] tensor; values clamped to [0, 1] and
// rounded to the 8-bit grid. Reading returns values n/255, so a tensor that
// is already on the grid round-trips bitwise.
void write_png_rgb8(const std::string& path, const Tensor<float>& image);
Tensor<float> read_png_rgb8(const std::string& path);

// 8-bit grayscale raster, row-major bytes. Exact byte round trip.
void write_png_gray8(const std::string& path, const std::vector<std::uint8_t>& pixels,
                     int height, int width);
std::vector<std::uint8_t> read_png_gray8(const std::string& path, int& height, int& width);

}  // namespace fcis
