#pragma once

#include <cstdint>
#include <vector>

#include "fcis/geometry.hpp"
#include "fcis/rng.hpp"
#include "fcis/tensor.hpp"

namespace fcis {

struct Proposal {
  BoxXYXY box;
  double score = 0;  // two-way softmax foreground probability
};

struct ProposalConfig {
  int pre_nms = 2000;
  int post_nms = 300;
  double nms_thresh = 0.7;
};

// Greedy non-maximum suppression. Returns the indices of the kept boxes in
// descending score order; equal scores resolve to the lower index.
std::vector<int> nms(const std::vector<BoxXYXY>& boxes, const std::vector<double>& scores,
                     double iou_thresh);

// Turns the RPN maps into scored boxes. rpn_obj is [2A, H, W] with channels
// (a*2 + {bg, fg}); rpn_deltas is [4A, H, W] with channels (a*4 + j); anchors
// is the matching generate_anchors list, index (cy*W + cx)*A + a. Deltas are
// applied and clipped, candidates sorted by score (stable, so ties keep
// anchor order), the top pre_nms go through NMS, and if fewer than post_nms
// survive the list is padded back from the suppressed ones in score order.
// The result is score-sorted and has min(post_nms, anchors) entries.
template <typename T>
std::vector<Proposal> select_proposals(const Tensor<T>& rpn_obj, const Tensor<T>& rpn_deltas,
                                       const std::vector<BoxXYXY>& anchors, int img_w, int img_h,
                                       const ProposalConfig& pc);

// Anchor-wise RPN training targets: 1 foreground, 0 background, -1 ignored.
// deltas[i] is meaningful only where labels[i] == 1.
struct AnchorTargets {
  std::vector<std::int8_t> labels;
  std::vector<BboxDeltas> deltas;
};

// Foreground: IoU >= 0.7 with any instance, plus every anchor achieving an
// instance's best IoU (ties included, zero-IoU bests excluded). Background:
// best IoU < 0.3. Everything else is ignored. Positives regress toward their
// own best-IoU instance (earlier instance on ties). When rng is given, at
// most `cap` foreground and `cap` background anchors stay labelled; the rest
// are flipped to ignored at random.
AnchorTargets rpn_targets(const std::vector<BoxXYXY>& anchors, const std::vector<BoxXYXY>& gt,
                          Rng* rng, int cap = 64);

// n noisy copies of the ground-truth boxes (round-robin): centres shifted by
// sigma * extent * N(0,1), extents scaled by exp(sigma * N(0,1)), clipped to
// the image. Deterministic given the rng state.
std::vector<BoxXYXY> jitter_proposals(const std::vector<BoxXYXY>& gt, Rng& rng, int n, int img_w,
                                      int img_h, double sigma = 0.1);

}  // namespace fcis
