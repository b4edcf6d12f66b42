#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fcis/geometry.hpp"
#include "fcis/rng.hpp"
#include "fcis/tensor.hpp"

namespace fcis {

// Fixed category ids; 0 is reserved for background everywhere.
inline constexpr int kCategoryRectangle = 1;
inline constexpr int kCategoryEllipse = 2;
inline constexpr int kCategoryTriangle = 3;
inline constexpr int kCategoryCount = 3;

// Any instance left with fewer visible pixels than this by occlusion would
// be unlearnable; scene generation rejects candidates that cause it.
inline constexpr int kMinVisiblePixels = 25;

struct Instance {
  BinaryMask mask;  // visible (post-occlusion) pixels only
  int category = 0;
};

struct Sample {
  Tensor<float> image;  // [3, H, W], values on the 8-bit grid
  std::vector<Instance> instances;
};

struct DatasetConfig {
  std::uint64_t seed = 7;
  int count = 100;
  int height = 128, width = 128;
  int min_instances = 1, max_instances = 5;
  double min_size = 24, max_size = 64;   // shape bounding-box extent, pixels
  std::vector<int> palette = {kCategoryRectangle, kCategoryEllipse, kCategoryTriangle};
  double noise = 0.02;                   // gaussian pixel-noise stddev

  void validate() const;  // throws ConfigError
};

// Pixel-center rasterizers; pixel (x, y) is foreground when its center
// (x + 0.5, y + 0.5) lies inside the shape.
BinaryMask rasterize_rectangle(int img_w, int img_h, const BoxXYXY& box);
BinaryMask rasterize_ellipse(int img_w, int img_h, double cx, double cy, double rx, double ry);
BinaryMask rasterize_triangle(int img_w, int img_h, double ax, double ay, double bx, double by,
                              double cx, double cy);

// One scene from one generator stream; later instances occlude earlier
// ones, candidates that would starve an earlier instance below
// kMinVisiblePixels are resampled (bounded budget, then fewer instances).
Sample generate_scene(Rng& rng, const DatasetConfig& cfg);

// Per-sample streams split from cfg.seed, so sample i never depends on how
// many draws sample i-1 consumed.
std::vector<Sample> generate_dataset(const DatasetConfig& cfg);

// Directory layout: NNNNN.img.png (RGB), NNNNN.inst.png (gray, pixel =
// instance id, 0 background), NNNNN.labels.txt (`id category` lines), plus
// index.txt listing the ids.
std::string sample_id(int i);
void write_dataset(const std::string& dir, const std::vector<Sample>& samples);
std::vector<Sample> read_dataset(const std::string& dir);

}  // namespace fcis
