#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fcis/dataset.hpp"
#include "fcis/head.hpp"
#include "fcis/model.hpp"
#include "fcis/proposals.hpp"
#include "fcis/tape.hpp"

namespace fcis {

struct TrainConfig {
  int iterations = 2000;  // absolute total; resuming continues toward it
  double lr = 5e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool ohem = true;
  int batch = 128;  // ROIs kept per iteration (mined or sampled)
  int rois = 300;   // proposals fed to the head
  // fraction of the ROI batch replaced by jittered ground-truth boxes;
  // 0 trains on RPN proposals alone
  double jitter_frac = 0.0;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// Step-function schedule: the base rate, cut to a tenth once two thirds of
// the total iterations are behind us.
double lr_at(const TrainConfig& cfg, int iteration);

// Everything about one iteration's ROI batch that is decided by *values*
// (proposal boxes, label assignment, mask rasters) rather than by the graph.
// Freezing it makes the remaining loss a differentiable function of the maps,
// which is what the finite-difference harness needs.
template <typename T>
struct RoiBatch {
  std::vector<RoiGrid> grids;
  std::vector<RoiTarget> targets;
  std::vector<Tensor<T>> mask_targets;  // absent() where the label is 0
};

template <typename T>
RoiBatch<T> make_roi_batch(const std::vector<BoxXYXY>& rois, const std::vector<Instance>& gt,
                           const ModelConfig& cfg, int map_h, int map_w);

// Head forward + per-ROI losses for the subset (empty subset = every ROI).
// The result is ordered like the subset.
template <typename T>
std::vector<RoiLossVars> build_roi_losses(Tape<T>& tape, Var psmaps, Var bbox_maps,
                                          const ModelConfig& cfg, const RoiBatch<T>& batch,
                                          const std::vector<int>& subset);

// Logged decomposition of the selected set: each term is summed over the
// selection and divided by its size, so l_det + l_seg + l_bbox equals the
// mean of the per-ROI totals exactly.
struct SelectedLoss {
  Var l_det;
  Var l_seg;
  Var l_bbox;
  Var total;
};

template <typename T>
SelectedLoss reduce_selected(Tape<T>& tape, const std::vector<RoiLossVars>& losses,
                             const std::vector<int>& selection);

// The RPN loss, frozen the same way: flat tensor indices of the sampled
// logits plus their targets.
struct RpnPlan {
  std::vector<std::int64_t> cls_indices;  // bg, fg per sampled anchor
  std::vector<int> cls_labels;            // 0 background, 1 foreground
  std::vector<std::int64_t> box_indices;  // 4 per foreground anchor
  std::vector<BboxDeltas> box_targets;
};

RpnPlan make_rpn_plan(const AnchorTargets& targets, int map_h, int map_w, int anchors_per_cell);

struct RpnLossVars {
  Var cls;
  Var box;
  Var total;
};

// Mean two-way cross entropy over the sampled anchors plus the mean of the
// per-anchor smooth-L1 sums over the foreground ones.
template <typename T>
RpnLossVars rpn_loss(Tape<T>& tape, Var rpn_obj, Var rpn_deltas, const RpnPlan& plan);

struct LossRow {
  int iteration = 0;
  double l_det = 0, l_seg = 0, l_bbox = 0, l_rpn = 0, l_total = 0;
};

void write_loss_csv_header(std::ostream& os);
void write_loss_csv_row(std::ostream& os, const LossRow& row);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRow> log;
  double mean_iter_ms = 0;
};

// One image per iteration, picked uniformly by the iteration's own RNG
// stream, so a run is reproducible from (seed, iteration range) alone.
// Resuming restarts momentum buffers at zero (checkpoints store parameters
// only). Throws NumericError the moment the total loss stops being finite.
TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg,
                  const std::vector<Sample>& data, const Checkpoint* resume,
                  std::ostream* loss_csv);

}  // namespace fcis
