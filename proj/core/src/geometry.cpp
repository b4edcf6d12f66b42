#include "fcis/geometry.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fcis {

double box_iou(const BoxXYXY& a, const BoxXYXY& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return inter / uni;
}

BboxDeltas encode_bbox_deltas(const BoxXYXY& src, const BoxXYXY& target) {
  const double sw = src.width(), sh = src.height();
  if (sw <= 0 || sh <= 0) {
    throw std::invalid_argument("encode_bbox_deltas: degenerate source box " +
                                std::to_string(sw) + " x " + std::to_string(sh));
  }
  const double tw = target.width(), th = target.height();
  if (tw <= 0 || th <= 0) {
    throw std::invalid_argument("encode_bbox_deltas: degenerate target box");
  }
  BboxDeltas d;
  d.dx = (target.cx() - src.cx()) / sw;
  d.dy = (target.cy() - src.cy()) / sh;
  d.dw = std::log(tw / sw);
  d.dh = std::log(th / sh);
  return d;
}

BoxXYXY apply_bbox_deltas(const BoxXYXY& src, const BboxDeltas& d, int img_w, int img_h) {
  const double sw = src.width(), sh = src.height();
  if (sw <= 0 || sh <= 0) {
    throw std::invalid_argument("apply_bbox_deltas: degenerate source box");
  }
  // exp() guard borrowed from the usual detector recipes
  static const double kClip = std::log(1000.0 / 16.0);
  const double cx = src.cx() + d.dx * sw;
  const double cy = src.cy() + d.dy * sh;
  const double w = sw * std::exp(std::min(d.dw, kClip));
  const double h = sh * std::exp(std::min(d.dh, kClip));
  return clip_box({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}, img_w, img_h);
}

BoxXYXY clip_box(const BoxXYXY& box, int img_w, int img_h) {
  BoxXYXY out = box;
  out.x1 = std::clamp(out.x1, 0.0, static_cast<double>(img_w));
  out.x2 = std::clamp(out.x2, 0.0, static_cast<double>(img_w));
  out.y1 = std::clamp(out.y1, 0.0, static_cast<double>(img_h));
  out.y2 = std::clamp(out.y2, 0.0, static_cast<double>(img_h));
  if (out.x2 - out.x1 < 1.0) {
    const double c = std::clamp(out.cx(), 0.5, img_w - 0.5);
    out.x1 = c - 0.5;
    out.x2 = c + 0.5;
  }
  if (out.y2 - out.y1 < 1.0) {
    const double c = std::clamp(out.cy(), 0.5, img_h - 0.5);
    out.y1 = c - 0.5;
    out.y2 = c + 0.5;
  }
  return out;
}

std::vector<BoxXYXY> generate_anchors(int map_h, int map_w, int stride,
                                      const std::vector<double>& scales,
                                      const std::vector<double>& ratios) {
  if (map_h < 1 || map_w < 1 || stride < 1) {
    throw std::invalid_argument("generate_anchors: bad map geometry");
  }
  if (scales.empty() || ratios.empty()) {
    throw std::invalid_argument("generate_anchors: need at least one scale and ratio");
  }
  std::vector<BoxXYXY> anchors;
  anchors.reserve(static_cast<std::size_t>(map_h) * map_w * scales.size() * ratios.size());
  for (int cy = 0; cy < map_h; ++cy) {
    for (int cx = 0; cx < map_w; ++cx) {
      const double px = (cx + 0.5) * stride;
      const double py = (cy + 0.5) * stride;
      for (double r : ratios) {
        const double sq = std::sqrt(r);
        for (double s : scales) {
          const double w = s / sq;
          const double h = s * sq;
          anchors.push_back(BoxXYXY{px - 0.5 * w, py - 0.5 * h, px + 0.5 * w, py + 0.5 * h});
        }
      }
    }
  }
  return anchors;
}

BinaryMask::BinaryMask(int width, int height) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw std::invalid_argument("BinaryMask: negative extent");
  words_.assign((static_cast<std::size_t>(width) * height + 63) / 64, 0);
}

std::int64_t BinaryMask::count() const {
  std::int64_t n = 0;
  for (std::uint64_t w : words_) n += std::popcount(w);
  return n;
}

BoxXYXY BinaryMask::bounding_box() const {
  int minx = width_, miny = height_, maxx = -1, maxy = -1;
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      if (!get(x, y)) continue;
      minx = std::min(minx, x);
      maxx = std::max(maxx, x);
      miny = std::min(miny, y);
      maxy = std::max(maxy, y);
    }
  }
  if (maxx < 0) throw std::invalid_argument("bounding_box() on an empty mask");
  return BoxXYXY{static_cast<double>(minx), static_cast<double>(miny),
                 static_cast<double>(maxx + 1), static_cast<double>(maxy + 1)};
}

std::int64_t mask_intersection(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_size(b)) throw std::invalid_argument("mask_intersection: size mismatch");
  std::int64_t n = 0;
  for (std::size_t i = 0; i < a.words_.size(); ++i) n += std::popcount(a.words_[i] & b.words_[i]);
  return n;
}

std::int64_t mask_union(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_size(b)) throw std::invalid_argument("mask_union: size mismatch");
  std::int64_t n = 0;
  for (std::size_t i = 0; i < a.words_.size(); ++i) n += std::popcount(a.words_[i] | b.words_[i]);
  return n;
}

BinaryMask mask_difference(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_size(b)) throw std::invalid_argument("mask_difference: size mismatch");
  BinaryMask out = a;
  for (std::size_t i = 0; i < out.words_.size(); ++i) out.words_[i] &= ~b.words_[i];
  return out;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  const std::int64_t uni = mask_union(a, b);
  if (uni == 0) return 0.0;
  return static_cast<double>(mask_intersection(a, b)) / static_cast<double>(uni);
}

}  // namespace fcis
