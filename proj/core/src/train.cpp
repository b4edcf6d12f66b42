#include "fcis/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "fcis/errors.hpp"
#include "fcis/kv.hpp"
#include "fcis/ops.hpp"
#include "fcis/sgd.hpp"

namespace fcis {

void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be positive");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
  if (batch < 1) throw ConfigError("batch must be positive");
  if (rois < 1) throw ConfigError("rois must be positive");
  if (!(jitter_frac >= 0 && jitter_frac <= 1)) throw ConfigError("jitter_frac must lie in [0, 1]");
}

double lr_at(const TrainConfig& cfg, int iteration) {
  return iteration >= (2 * cfg.iterations) / 3 ? cfg.lr * 0.1 : cfg.lr;
}

template <typename T>
RoiBatch<T> make_roi_batch(const std::vector<BoxXYXY>& rois, const std::vector<Instance>& gt,
                           const ModelConfig& cfg, int map_h, int map_w) {
  RoiBatch<T> batch;
  batch.targets = assign_roi_labels(rois, gt);
  batch.grids.reserve(rois.size());
  batch.mask_targets.resize(rois.size());
  const int k = cfg.effective_k();
  for (std::size_t i = 0; i < rois.size(); ++i) {
    batch.grids.push_back(project_roi(rois[i], cfg.stride, map_h, map_w, k));
    const RoiTarget& t = batch.targets[i];
    if (t.label > 0) {
      batch.mask_targets[i] = rasterize_mask_target<T>(
          gt[static_cast<std::size_t>(t.gt_index)].mask, batch.grids[i], cfg.stride);
    }
  }
  return batch;
}

template <typename T>
std::vector<RoiLossVars> build_roi_losses(Tape<T>& tape, Var psmaps, Var bbox_maps,
                                          const ModelConfig& cfg, const RoiBatch<T>& batch,
                                          const std::vector<int>& subset) {
  std::vector<int> idx = subset;
  if (idx.empty()) {
    idx.resize(batch.grids.size());
    std::iota(idx.begin(), idx.end(), 0);
  }
  std::vector<RoiLossVars> out;
  out.reserve(idx.size());
  for (int i : idx) {
    const std::size_t u = static_cast<std::size_t>(i);
    RoiForward fwd = forward_roi(tape, psmaps, bbox_maps, batch.grids[u], cfg);
    const Tensor<T>* mt = batch.mask_targets[u].absent() ? nullptr : &batch.mask_targets[u];
    out.push_back(roi_losses(tape, fwd, batch.targets[u], mt));
  }
  return out;
}

template <typename T>
SelectedLoss reduce_selected(Tape<T>& tape, const std::vector<RoiLossVars>& losses,
                             const std::vector<int>& selection) {
  if (selection.empty()) throw std::invalid_argument("reduce_selected: empty selection");
  std::vector<Var> dets, segs, boxes;
  for (int i : selection) {
    const RoiLossVars& l = losses[static_cast<std::size_t>(i)];
    dets.push_back(l.l_det);
    if (l.l_seg) segs.push_back(*l.l_seg);
    if (l.l_bbox) boxes.push_back(*l.l_bbox);
  }
  const double inv = 1.0 / static_cast<double>(selection.size());
  auto mean_or_zero = [&](std::vector<Var>& terms) {
    if (terms.empty()) return tape.constant(Tensor<T>::scalar(0));
    return scale(tape, add_n(tape, terms), inv);
  };
  SelectedLoss out;
  out.l_det = mean_or_zero(dets);
  out.l_seg = mean_or_zero(segs);
  out.l_bbox = mean_or_zero(boxes);
  out.total = add_n(tape, {out.l_det, out.l_seg, out.l_bbox});
  return out;
}

RpnPlan make_rpn_plan(const AnchorTargets& targets, int map_h, int map_w, int anchors_per_cell) {
  RpnPlan plan;
  const std::int64_t hw = static_cast<std::int64_t>(map_h) * map_w;
  for (std::size_t i = 0; i < targets.labels.size(); ++i) {
    if (targets.labels[i] == -1) continue;
    const std::int64_t a = static_cast<std::int64_t>(i) % anchors_per_cell;
    const std::int64_t cell = static_cast<std::int64_t>(i) / anchors_per_cell;
    const std::int64_t cx = cell % map_w, cy = cell / map_w;
    const std::int64_t at = cy * map_w + cx;
    plan.cls_indices.push_back((a * 2 + 0) * hw + at);
    plan.cls_indices.push_back((a * 2 + 1) * hw + at);
    plan.cls_labels.push_back(targets.labels[i] == 1 ? 1 : 0);
    if (targets.labels[i] == 1) {
      for (std::int64_t j = 0; j < 4; ++j) plan.box_indices.push_back((a * 4 + j) * hw + at);
      plan.box_targets.push_back(targets.deltas[i]);
    }
  }
  return plan;
}

template <typename T>
RpnLossVars rpn_loss(Tape<T>& tape, Var rpn_obj, Var rpn_deltas, const RpnPlan& plan) {
  RpnLossVars out;
  const int n = static_cast<int>(plan.cls_labels.size());
  if (n > 0) {
    Var logits = gather_scalars(tape, rpn_obj, plan.cls_indices);
    std::vector<Var> ces;
    ces.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      Var pair = slice0(tape, logits, 2 * i, 2 * i + 2);
      ces.push_back(softmax_ce(tape, pair, plan.cls_labels[static_cast<std::size_t>(i)]));
    }
    out.cls = scale(tape, add_n(tape, ces), 1.0 / n);
  } else {
    out.cls = tape.constant(Tensor<T>::scalar(0));
  }

  const int p = static_cast<int>(plan.box_targets.size());
  if (p > 0) {
    Var preds = gather_scalars(tape, rpn_deltas, plan.box_indices);
    std::vector<Var> terms;
    terms.reserve(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) {
      Var pred = slice0(tape, preds, 4 * i, 4 * i + 4);
      const BboxDeltas& d = plan.box_targets[static_cast<std::size_t>(i)];
      Tensor<T> target({4});
      target[0] = static_cast<T>(d.dx);
      target[1] = static_cast<T>(d.dy);
      target[2] = static_cast<T>(d.dw);
      target[3] = static_cast<T>(d.dh);
      terms.push_back(smooth_l1_sum(tape, pred, target));
    }
    out.box = scale(tape, add_n(tape, terms), 1.0 / p);
  } else {
    out.box = tape.constant(Tensor<T>::scalar(0));
  }
  out.total = add(tape, out.cls, out.box);
  return out;
}

void write_loss_csv_header(std::ostream& os) { os << "iter,l_det,l_seg,l_bbox,l_rpn,l_total\n"; }

void write_loss_csv_row(std::ostream& os, const LossRow& row) {
  os << row.iteration << ',' << format_double(row.l_det) << ',' << format_double(row.l_seg) << ','
     << format_double(row.l_bbox) << ',' << format_double(row.l_rpn) << ','
     << format_double(row.l_total) << '\n';
}

TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg,
                  const std::vector<Sample>& data, const Checkpoint* resume,
                  std::ostream* loss_csv) {
  mcfg.validate();
  tcfg.validate();
  if (data.empty()) throw DataError("training needs at least one sample");

  ParamSet<float> params;
  int start = 0;
  if (resume != nullptr) {
    if (format_model_config(resume->config) != format_model_config(mcfg)) {
      throw ConfigError("resume checkpoint was trained with a different model config");
    }
    params = resume->params;
    start = static_cast<int>(resume->iteration);
  } else {
    params = init_params<float>(mcfg, tcfg.seed);
  }

  std::vector<Tensor<float>> velocity(params.items.size());
  TrainResult result;
  if (loss_csv != nullptr) write_loss_csv_header(*loss_csv);

  double total_ms = 0;
  int steps = 0;
  for (int iter = start; iter < tcfg.iterations; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng = stream_rng(tcfg.seed, static_cast<std::uint64_t>(iter));
    const Sample& sample = data[static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<int>(data.size()) - 1))];
    const int img_h = sample.image.dim(1), img_w = sample.image.dim(2);

    Tape<float> tape;
    TapedParams lifted = lift_params(tape, params, /*trainable=*/true);
    Var image = tape.constant(sample.image);
    ScoreMapVars maps = forward_backbone(tape, image, lifted, mcfg);
    const int map_h = tape.value(maps.psmaps).dim(1);
    const int map_w = tape.value(maps.psmaps).dim(2);

    const std::vector<BoxXYXY> anchors =
        generate_anchors(map_h, map_w, mcfg.stride, mcfg.anchor_scales, mcfg.anchor_ratios);
    std::vector<BoxXYXY> gt_boxes;
    gt_boxes.reserve(sample.instances.size());
    for (const Instance& inst : sample.instances) gt_boxes.push_back(inst.mask.bounding_box());

    const AnchorTargets at = rpn_targets(anchors, gt_boxes, &rng);
    const RpnPlan rplan = make_rpn_plan(at, map_h, map_w, mcfg.anchors());
    const RpnLossVars rpn = rpn_loss(tape, maps.rpn_obj, maps.rpn_deltas, rplan);

    ProposalConfig pc;
    pc.post_nms = tcfg.rois;
    std::vector<Proposal> props = select_proposals(tape.value(maps.rpn_obj),
                                                   tape.value(maps.rpn_deltas), anchors, img_w,
                                                   img_h, pc);
    std::vector<BoxXYXY> rois;
    rois.reserve(props.size());
    for (const Proposal& p : props) rois.push_back(p.box);
    if (tcfg.jitter_frac > 0 && !gt_boxes.empty()) {
      // replace the weakest tail so the head sees some well-placed boxes
      const int n_jit = std::min<int>(static_cast<int>(rois.size()),
                                      static_cast<int>(std::lround(tcfg.jitter_frac *
                                                                   static_cast<double>(rois.size()))));
      const std::vector<BoxXYXY> jit = jitter_proposals(gt_boxes, rng, n_jit, img_w, img_h);
      std::copy(jit.begin(), jit.end(), rois.end() - n_jit);
    }

    const RoiBatch<float> batch = make_roi_batch<float>(rois, sample.instances, mcfg, map_h, map_w);

    SelectedLoss sel;
    if (tcfg.ohem) {
      const std::vector<RoiLossVars> losses =
          build_roi_losses(tape, maps.psmaps, maps.bbox_maps, mcfg, batch, {});
      std::vector<double> totals;
      totals.reserve(losses.size());
      for (const RoiLossVars& l : losses) totals.push_back(tape.value(l.total).scalar_value());
      sel = reduce_selected(tape, losses, ohem_select(totals, tcfg.batch));
    } else {
      std::vector<int> labels;
      labels.reserve(batch.targets.size());
      for (const RoiTarget& t : batch.targets) labels.push_back(t.label);
      const std::vector<int> chosen = sample_minibatch(labels, tcfg.batch, rng);
      const std::vector<RoiLossVars> losses =
          build_roi_losses(tape, maps.psmaps, maps.bbox_maps, mcfg, batch, chosen);
      std::vector<int> identity(losses.size());
      std::iota(identity.begin(), identity.end(), 0);
      sel = reduce_selected(tape, losses, identity);
    }

    Var total = add(tape, sel.total, rpn.total);
    LossRow row;
    row.iteration = iter;
    row.l_det = tape.value(sel.l_det).scalar_value();
    row.l_seg = tape.value(sel.l_seg).scalar_value();
    row.l_bbox = tape.value(sel.l_bbox).scalar_value();
    row.l_rpn = tape.value(rpn.total).scalar_value();
    row.l_total = tape.value(total).scalar_value();
    if (!std::isfinite(row.l_total)) {
      throw NumericError("loss became non-finite at iteration " + std::to_string(iter));
    }

    tape.backward(total);
    const SgdHyper hyper{lr_at(tcfg, iter), tcfg.momentum, tcfg.weight_decay};
    for (std::size_t j = 0; j < params.items.size(); ++j) {
      const Var v = lifted.items[j].second;
      if (!tape.has_grad(v)) continue;  // untouched this iteration (e.g. no positives)
      sgd_step(params.items[j].second, tape.grad(v), velocity[j], hyper);
    }

    result.log.push_back(row);
    if (loss_csv != nullptr) write_loss_csv_row(*loss_csv, row);
    total_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
    ++steps;
  }

  result.mean_iter_ms = steps > 0 ? total_ms / steps : 0.0;
  result.checkpoint.config = mcfg;
  result.checkpoint.iteration = static_cast<std::uint32_t>(std::max(start, tcfg.iterations));
  result.checkpoint.params = std::move(params);
  return result;
}

#define FCIS_INSTANTIATE_TRAIN(T)                                                       \
  template RoiBatch<T> make_roi_batch(const std::vector<BoxXYXY>&,                      \
                                      const std::vector<Instance>&, const ModelConfig&, \
                                      int, int);                                        \
  template std::vector<RoiLossVars> build_roi_losses(Tape<T>&, Var, Var,                \
                                                     const ModelConfig&,                \
                                                     const RoiBatch<T>&,                \
                                                     const std::vector<int>&);          \
  template SelectedLoss reduce_selected(Tape<T>&, const std::vector<RoiLossVars>&,      \
                                        const std::vector<int>&);                       \
  template RpnLossVars rpn_loss(Tape<T>&, Var, Var, const RpnPlan&);

FCIS_INSTANTIATE_TRAIN(float)
FCIS_INSTANTIATE_TRAIN(double)

#undef FCIS_INSTANTIATE_TRAIN

}  // namespace fcis
