#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace fcis {

// Axis-aligned box in continuous image coordinates: width = x2 - x1, no
// end-pixel +1 convention anywhere.
struct BoxXYXY {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
};

// Intersection over union; 0 for disjoint boxes, 1 for identical ones.
double box_iou(const BoxXYXY& a, const BoxXYXY& b);

struct BboxDeltas {
  double dx = 0, dy = 0, dw = 0, dh = 0;
};

// Fast R-CNN style: dx = (tcx - scx)/sw, dy = (tcy - scy)/sh,
// dw = log(tw/sw), dh = log(th/sh). Degenerate source boxes are an error.
BboxDeltas encode_bbox_deltas(const BoxXYXY& src, const BoxXYXY& target);

// Inverse of encode, with dw/dh clamped to log(1000/16) before exp, the
// result clipped to [0,w]x[0,h] and forced to at least 1 pixel of extent.
BoxXYXY apply_bbox_deltas(const BoxXYXY& src, const BboxDeltas& d, int img_w, int img_h);

// The clip-and-repair step of apply_bbox_deltas on its own.
BoxXYXY clip_box(const BoxXYXY& box, int img_w, int img_h);

// One box per (cell, ratio, scale), cells row-major with centers at
// ((x+0.5)*stride, (y+0.5)*stride), ratio-major scale-minor within a cell.
// ratio r gives a box of width scale/sqrt(r) and height scale*sqrt(r), so
// r = 1 is a scale x scale square. Boxes are not clipped to any image.
std::vector<BoxXYXY> generate_anchors(int map_h, int map_w, int stride,
                                      const std::vector<double>& scales,
                                      const std::vector<double>& ratios);

// Bit-per-pixel foreground mask, row-major, packed into 64-bit words.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }

  bool get(int x, int y) const {
    const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
    return (words_[i >> 6] >> (i & 63)) & 1u;
  }
  void set(int x, int y, bool v) {
    const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
    const std::uint64_t bit = std::uint64_t(1) << (i & 63);
    if (v) {
      words_[i >> 6] |= bit;
    } else {
      words_[i >> 6] &= ~bit;
    }
  }

  std::int64_t count() const;
  bool empty() const { return count() == 0; }
  bool same_size(const BinaryMask& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }
  bool operator==(const BinaryMask& o) const {
    return width_ == o.width_ && height_ == o.height_ && words_ == o.words_;
  }

  // Tight bounding rectangle in continuous coordinates: pixel (x, y) covers
  // [x, x+1) x [y, y+1). Invalid on an empty mask.
  BoxXYXY bounding_box() const;

  const std::vector<std::uint64_t>& words() const { return words_; }

 private:
  friend std::int64_t mask_intersection(const BinaryMask&, const BinaryMask&);
  friend std::int64_t mask_union(const BinaryMask&, const BinaryMask&);
  friend BinaryMask mask_difference(const BinaryMask&, const BinaryMask&);
  int width_ = 0, height_ = 0;
  std::vector<std::uint64_t> words_;
};

std::int64_t mask_intersection(const BinaryMask& a, const BinaryMask& b);
std::int64_t mask_union(const BinaryMask& a, const BinaryMask& b);

// Pixels of a not in b.
BinaryMask mask_difference(const BinaryMask& a, const BinaryMask& b);

// Pixel-count IoU of two same-size masks; 0 when both are empty.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

}  // namespace fcis
