#include "fcis/head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fcis/ops.hpp"

namespace fcis {

namespace {

template <typename T>
Tensor<T> ones_mask(int h, int w) {
  return Tensor<T>::full({h, w}, T(1));
}

// Per-pixel weight 1/|cell(p)|. Summing x*w over the span averages within
// each cell first; the weights themselves sum to the number of non-empty
// cells, so masked_avg_pool turns into the cell-mean-then-vote reduction.
template <typename T>
Tensor<T> cell_vote_weights(const RoiGrid& grid) {
  std::vector<int> count(static_cast<std::size_t>(grid.k) * grid.k, 0);
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) ++count[static_cast<std::size_t>(grid.cell(y, x))];
  }
  Tensor<T> w({grid.height, grid.width});
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      w.at(y, x) = T(1) / static_cast<T>(count[static_cast<std::size_t>(grid.cell(y, x))]);
    }
  }
  return w;
}

}  // namespace

template <typename T>
RoiForward forward_roi(Tape<T>& tape, Var psmaps, Var bbox_maps, const RoiGrid& grid,
                       const ModelConfig& cfg) {
  const int k = cfg.effective_k();
  if (grid.k != k) {
    throw std::invalid_argument("forward_roi: grid built for k=" + std::to_string(grid.k) +
                                ", head expects k=" + std::to_string(k));
  }
  const Tensor<T>& pv = tape.value(psmaps);
  const Tensor<T>& bv = tape.value(bbox_maps);
  if (pv.rank() != 3 || pv.dim(0) != cfg.psmap_channels()) {
    throw std::invalid_argument("forward_roi: psmaps must be [" +
                                std::to_string(cfg.psmap_channels()) + ", H, W]");
  }
  if (bv.rank() != 3 || bv.dim(0) != cfg.bbox_channels()) {
    throw std::invalid_argument("forward_roi: bbox maps must be [" +
                                std::to_string(cfg.bbox_channels()) + ", H, W]");
  }

  const int nc = cfg.categories + 1;
  RoiForward out;
  out.grid = grid;

  if (cfg.head_mode == HeadMode::separate) {
    const int half = k * k * nc;
    Var seg_set = slice0(tape, psmaps, 0, half);
    Var cls_set = slice0(tape, psmaps, half, 2 * half);
    out.seg_logits = psroi_assemble(tape, seg_set, grid);
    Var cls_asm = psroi_assemble(tape, cls_set, grid);
    out.class_logits = masked_avg_pool(tape, cls_asm, cell_vote_weights<T>(grid));
  } else {
    Var assembled = psroi_assemble(tape, psmaps, grid);  // [2(C+1), rh, rw]
    Var inside = slice0(tape, assembled, 0, nc);
    Var outside = slice0(tape, assembled, nc, 2 * nc);
    out.seg_logits = sub(tape, inside, outside);
    Var likelihood = pixel_max(tape, inside, outside);
    out.class_logits = masked_avg_pool(tape, likelihood, ones_mask<T>(grid.height, grid.width));
  }
  out.class_probs = channel_softmax(tape, out.class_logits);

  Var bbox_asm = psroi_assemble(tape, bbox_maps, grid);  // [4, rh, rw]
  out.bbox_deltas = masked_avg_pool(tape, bbox_asm, ones_mask<T>(grid.height, grid.width));
  return out;
}

std::vector<RoiTarget> assign_roi_labels(const std::vector<BoxXYXY>& rois,
                                         const std::vector<Instance>& gt) {
  std::vector<BoxXYXY> gt_boxes;
  gt_boxes.reserve(gt.size());
  for (const Instance& inst : gt) gt_boxes.push_back(inst.mask.bounding_box());

  std::vector<RoiTarget> targets;
  targets.reserve(rois.size());
  for (const BoxXYXY& roi : rois) {
    RoiTarget t;
    double best = 0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double iou = box_iou(roi, gt_boxes[g]);
      if (iou > best) {  // strict: equal IoU keeps the earlier instance
        best = iou;
        t.gt_index = static_cast<int>(g);
      }
    }
    if (t.gt_index >= 0 && best > 0.5) {
      t.label = gt[static_cast<std::size_t>(t.gt_index)].category;
      t.bbox_target = encode_bbox_deltas(roi, gt_boxes[static_cast<std::size_t>(t.gt_index)]);
    } else {
      t.label = 0;
      t.gt_index = -1;
    }
    targets.push_back(t);
  }
  return targets;
}

template <typename T>
Tensor<T> rasterize_mask_target(const BinaryMask& mask, const RoiGrid& grid, int stride) {
  Tensor<T> out({1, grid.height, grid.width});
  for (int y = 0; y < grid.height; ++y) {
    const double py = (grid.y0 + y + 0.5) * stride;
    int iy = static_cast<int>(std::floor(py));
    iy = std::clamp(iy, 0, mask.height() - 1);
    for (int x = 0; x < grid.width; ++x) {
      const double px = (grid.x0 + x + 0.5) * stride;
      int ix = static_cast<int>(std::floor(px));
      ix = std::clamp(ix, 0, mask.width() - 1);
      out.at(0, y, x) = mask.get(ix, iy) ? T(1) : T(0);
    }
  }
  return out;
}

template <typename T>
RoiLossVars roi_losses(Tape<T>& tape, const RoiForward& fwd, const RoiTarget& target,
                       const Tensor<T>* mask_target) {
  RoiLossVars out;
  out.l_det = softmax_ce(tape, fwd.class_logits, target.label);
  if (target.label <= 0) {
    out.total = out.l_det;
    return out;
  }
  if (mask_target == nullptr) {
    throw std::invalid_argument("roi_losses: positive ROI needs a mask target");
  }
  Var seg_plane = slice0(tape, fwd.seg_logits, target.label, target.label + 1);
  out.l_seg = bce_logits_mean(tape, seg_plane, *mask_target);

  Tensor<T> bt({4});
  bt[0] = static_cast<T>(target.bbox_target.dx);
  bt[1] = static_cast<T>(target.bbox_target.dy);
  bt[2] = static_cast<T>(target.bbox_target.dw);
  bt[3] = static_cast<T>(target.bbox_target.dh);
  out.l_bbox = smooth_l1_sum(tape, fwd.bbox_deltas, bt);

  out.total = add_n(tape, {out.l_det, *out.l_seg, *out.l_bbox});
  return out;
}

std::vector<int> ohem_select(const std::vector<double>& losses, int n) {
  const int m = static_cast<int>(losses.size());
  std::vector<int> idx(static_cast<std::size_t>(m));
  std::iota(idx.begin(), idx.end(), 0);
  if (n >= m) return idx;
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (losses[static_cast<std::size_t>(a)] != losses[static_cast<std::size_t>(b)]) {
      return losses[static_cast<std::size_t>(a)] > losses[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(std::max(n, 0)));
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

// Fisher-Yates through our own uniform_int so the draw sequence is pinned by
// the seed alone, not by the standard library.
void shuffle_indices(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

std::vector<int> sample_minibatch(const std::vector<int>& labels, int n, Rng& rng) {
  const int m = static_cast<int>(labels.size());
  std::vector<int> all(static_cast<std::size_t>(m));
  std::iota(all.begin(), all.end(), 0);
  if (n >= m) return all;

  std::vector<int> pos, neg;
  for (int i = 0; i < m; ++i) (labels[static_cast<std::size_t>(i)] > 0 ? pos : neg).push_back(i);
  shuffle_indices(pos, rng);
  shuffle_indices(neg, rng);

  const int want_pos = std::min<int>(static_cast<int>(pos.size()), n / 4);
  const int want_neg = std::min<int>(static_cast<int>(neg.size()), n - want_pos);
  std::vector<int> picked(pos.begin(), pos.begin() + want_pos);
  picked.insert(picked.end(), neg.begin(), neg.begin() + want_neg);
  // negatives exhausted: top up from the remaining positives
  for (std::size_t i = static_cast<std::size_t>(want_pos);
       static_cast<int>(picked.size()) < n && i < pos.size(); ++i) {
    picked.push_back(pos[i]);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

template RoiForward forward_roi(Tape<float>&, Var, Var, const RoiGrid&, const ModelConfig&);
template RoiForward forward_roi(Tape<double>&, Var, Var, const RoiGrid&, const ModelConfig&);
template Tensor<float> rasterize_mask_target(const BinaryMask&, const RoiGrid&, int);
template Tensor<double> rasterize_mask_target(const BinaryMask&, const RoiGrid&, int);
template RoiLossVars roi_losses(Tape<float>&, const RoiForward&, const RoiTarget&,
                                const Tensor<float>*);
template RoiLossVars roi_losses(Tape<double>&, const RoiForward&, const RoiTarget&,
                                const Tensor<double>*);

}  // namespace fcis
