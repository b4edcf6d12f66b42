#pragma once

#include <optional>
#include <vector>

#include "fcis/dataset.hpp"
#include "fcis/geometry.hpp"
#include "fcis/model.hpp"
#include "fcis/psroi.hpp"
#include "fcis/rng.hpp"
#include "fcis/tape.hpp"

namespace fcis {

// Everything the per-ROI head produces, as tape handles. seg_logits is
// [C+1, rh, rw]; consumers apply a sigmoid to get mask probabilities.
struct RoiForward {
  RoiGrid grid;
  Var seg_logits;
  Var class_logits;  // [C+1] pooled likelihoods
  Var class_probs;   // softmax of class_logits
  Var bbox_deltas;   // [4] ROI mean of the class-agnostic bbox maps
};

// Assembles the position-sensitive maps for one ROI and fuses them.
//
// joint / translation_invariant: per-pixel seg logit = inside - outside,
// per-pixel likelihood = max(inside, outside), classification logit = spatial
// mean of the likelihood. Classification and segmentation share every map
// value, so both losses reach the same channels.
//
// separate: the first k^2(C+1) maps carry per-pixel mask logits and never see
// the classification loss; the second set is pooled R-FCN style (mean within
// each grid cell, then mean over the non-empty cells).
//
// grid.k must equal cfg.effective_k().
template <typename T>
RoiForward forward_roi(Tape<T>& tape, Var psmaps, Var bbox_maps, const RoiGrid& grid,
                       const ModelConfig& cfg);

// Ground-truth assignment for one ROI. label 0 is background.
struct RoiTarget {
  int label = 0;
  int gt_index = -1;
  BboxDeltas bbox_target{};
};

// An ROI is positive iff its best IoU with a ground-truth mask bounding box
// strictly exceeds 0.5; ties between instances resolve to the earlier one.
// Positive targets carry the encoded box regression target.
std::vector<RoiTarget> assign_roi_labels(const std::vector<BoxXYXY>& rois,
                                         const std::vector<Instance>& gt);

// Nearest-neighbour ground-truth mask at assembled-map resolution: map pixel
// (y, x) samples the image mask at ((x0+x+0.5)*stride, (y0+y+0.5)*stride).
// Shaped [1, rh, rw] to line up with a one-channel slice of seg_logits.
template <typename T>
Tensor<T> rasterize_mask_target(const BinaryMask& mask, const RoiGrid& grid, int stride);

struct RoiLossVars {
  Var l_det;
  std::optional<Var> l_seg;   // positives only
  std::optional<Var> l_bbox;  // positives only
  Var total;
};

// Per-ROI loss, equal term weights. l_det is softmax cross entropy over the
// pooled class logits. Positives add the binary cross entropy of the target
// category's seg plane against mask_target (mean over the rh*rw pixels) and a
// smooth-L1 penalty over the four box deltas; mask_target is required then.
template <typename T>
RoiLossVars roi_losses(Tape<T>& tape, const RoiForward& fwd, const RoiTarget& target,
                       const Tensor<T>* mask_target);

// Online hard example mining: indices of the n largest losses, ties resolved
// toward the lower index, returned ascending. n >= size selects everything.
std::vector<int> ohem_select(const std::vector<double>& losses, int n);

// The non-mined alternative: n random ROIs with at most a quarter positives
// (backfilled from positives only once negatives run out). Selects everything
// when n >= size. Returned ascending.
std::vector<int> sample_minibatch(const std::vector<int>& labels, int n, Rng& rng);

}  // namespace fcis
