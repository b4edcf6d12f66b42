#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fcis/geometry.hpp"
#include "fcis/model.hpp"
#include "fcis/psroi.hpp"
#include "fcis/tensor.hpp"

namespace fcis {

struct InferConfig {
  int proposals = 300;
  double score_thresh = 0.05;
  double nms_thresh = 0.3;
  double mask_binarize = 0.4;
  double vote_iou = 0.5;  // strict lower bound on supporter box IoU

  void validate() const;  // throws ConfigError
};

struct Detection {
  int category = 0;  // foreground categories start at 1
  double score = 0;
  BoxXYXY box;      // tight bounding rectangle of the voted mask
  BinaryMask mask;  // full image extent
};

// One head evaluation, reduced to what voting needs.
struct VoteInput {
  BoxXYXY box;
  RoiGrid grid;
  Tensor<float> class_probs;  // [C+1]
  Tensor<float> seg_logits;   // [C+1, rh, rw]
};

// Mask voting for candidate `det`: every candidate whose box IoU with det's
// box exceeds vote_iou (det itself included) pastes its bilinearly upsampled
// sigmoid seg plane for `category` onto its own map-span rectangle, weighted
// by its class probability (weights renormalized to sum 1, pixels outside a
// supporter's rectangle get nothing from it); the blend is binarized at
// mask_binarize. May come out empty.
BinaryMask vote_mask(const std::vector<VoteInput>& cands, std::size_t det, int category,
                     int stride, int img_h, int img_w, const InferConfig& icfg);

// One backbone pass per image. The RPN's top `proposals` boxes go through the
// head, their box regressions spawn a refined second round, and both rounds
// (2 x proposals candidates in total) feed score thresholding, per-category
// NMS, and mask voting. Detections whose vote comes out empty are dropped;
// a surviving detection's box is its mask's bounding rectangle. Results are
// sorted by descending score.
std::vector<Detection> run_inference(const ParamSet<float>& params, const ModelConfig& cfg,
                                     const Tensor<float>& image, const InferConfig& icfg);

// One text line per detection:
//   image_id category score x1 y1 x2 y2 h w n c1..cn
// where c1..cn run-length encode the mask row-major, first run background.
std::vector<std::int64_t> rle_encode(const BinaryMask& mask);
BinaryMask rle_decode(const std::vector<std::int64_t>& runs, int width, int height);

void write_detection_lines(std::ostream& os, int image_id, const std::vector<Detection>& dets);

struct DetectionRecord {
  int image_id = 0;
  Detection det;
};

std::vector<DetectionRecord> read_detection_lines(std::istream& is);  // throws DataError

// Masks tinted per category (alpha blend) plus a one-pixel box outline, for
// eyeballing results.
Tensor<float> render_overlay(const Tensor<float>& image, const std::vector<Detection>& dets);

}  // namespace fcis
