#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fcis/dataset.hpp"
#include "fcis/head.hpp"
#include "fcis/model.hpp"
#include "fcis/proposals.hpp"
#include "fcis/psroi.hpp"
#include "fcis/train.hpp"

#include "grad_check.hpp"
#include "grad_suite.hpp"
#include "testutil.hpp"

namespace testutil {

// A net small enough that a full forward costs microseconds.
inline fcis::ModelConfig tiny_model_config(fcis::HeadMode mode) {
  fcis::ModelConfig cfg;
  cfg.categories = 2;
  cfg.trunk_widths = {4, 4, 4, 4, 4, 8};
  cfg.reduce_channels = 8;
  cfg.rpn_channels = 4;
  cfg.anchor_scales = {12, 20};
  cfg.anchor_ratios = {1.0};
  cfg.head_mode = mode;
  return cfg;
}

// The fused head takes a pixelwise max of the inside/outside pair, which has
// a kink at ties; nudging near-ties keeps central differences two-sided.
inline void separate_inout_ties(fcis::Tensor<double>& psmaps, int categories, int k) {
  const int nc = categories + 1, k2 = k * k;
  for (int cat = 0; cat < nc; ++cat) {
    for (int cell = 0; cell < k2; ++cell) {
      for (int y = 0; y < psmaps.dim(1); ++y) {
        for (int x = 0; x < psmaps.dim(2); ++x) {
          const double out = psmaps.at((nc + cat) * k2 + cell, y, x);
          double& in = psmaps.at(cat * k2 + cell, y, x);
          if (std::abs(in - out) < 1e-3) in = out + (in >= out ? 1e-3 : -1e-3);
        }
      }
    }
  }
}

inline fcis::BinaryMask grad_rect_mask(int extent, int x1, int y1, int x2, int y2) {
  fcis::BinaryMask m(extent, extent);
  for (int y = y1; y < y2; ++y) {
    for (int x = x1; x < x2; ++x) m.set(x, y, true);
  }
  return m;
}

// Leaves are the score maps themselves; the batch (grids, labels, mask
// rasters) is pinned so the losses are a pure function of the maps.
inline std::pair<std::vector<fcis::Tensor<double>>, LossBuilder> make_roi_loss_case(
    fcis::Rng& rng, fcis::HeadMode mode) {
  using fcis::Tensor;
  const fcis::ModelConfig cfg = tiny_model_config(mode);
  const int map_h = 6, map_w = 6;

  Tensor<double> psmaps = rand_tensor(rng, {cfg.psmap_channels(), map_h, map_w}, -1.5, 1.5);
  separate_inout_ties(psmaps, cfg.categories, cfg.effective_k());
  // small map values keep pooled deltas far from the smooth-L1 kink at 1
  Tensor<double> bbox = rand_tensor(rng, {cfg.bbox_channels(), map_h, map_w}, -0.25, 0.25);

  std::vector<fcis::Instance> gt;
  gt.push_back({grad_rect_mask(48, 4, 4, 20, 20), 1});
  gt.push_back({grad_rect_mask(48, 26, 24, 44, 40), 2});
  const std::vector<fcis::BoxXYXY> rois = {
      {4, 4, 20, 20},   // exact hit
      {26, 24, 44, 40},
      {5, 6, 22, 21},   // jittered positive
      {28, 2, 44, 18},  // background
      {0, 30, 14, 46},
  };
  fcis::RoiBatch<double> batch = fcis::make_roi_batch<double>(rois, gt, cfg, map_h, map_w);

  LossBuilder build = [cfg, batch](fcis::Tape<double>& tape,
                                   const std::vector<fcis::Var>& vars) {
    std::vector<fcis::RoiLossVars> losses =
        fcis::build_roi_losses(tape, vars[0], vars[1], cfg, batch, {});
    std::vector<int> identity(losses.size());
    std::iota(identity.begin(), identity.end(), 0);
    return fcis::reduce_selected(tape, losses, identity).total;
  };
  return {{std::move(psmaps), std::move(bbox)}, std::move(build)};
}

inline std::pair<std::vector<fcis::Tensor<double>>, LossBuilder> make_rpn_loss_case(
    fcis::Rng& rng, bool with_positives) {
  using fcis::Tensor;
  const int a_per = 2, map_h = 3, map_w = 4;
  Tensor<double> obj = rand_tensor(rng, {2 * a_per, map_h, map_w}, -1.5, 1.5);
  Tensor<double> deltas = rand_tensor(rng, {4 * a_per, map_h, map_w}, -0.3, 0.3);

  fcis::AnchorTargets targets;
  const std::size_t n = static_cast<std::size_t>(a_per) * map_h * map_w;
  targets.labels.assign(n, -1);
  targets.deltas.assign(n, fcis::BboxDeltas{});
  for (std::size_t i = 0; i < n; ++i) {
    const int draw = fcis::uniform_int(rng, 0, 3);
    if (draw == 0 && with_positives) {
      targets.labels[i] = 1;
      targets.deltas[i] = {fcis::uniform_real(rng, -0.4, 0.4), fcis::uniform_real(rng, -0.4, 0.4),
                           fcis::uniform_real(rng, -0.4, 0.4), fcis::uniform_real(rng, -0.4, 0.4)};
    } else if (draw == 1) {
      targets.labels[i] = 0;
    }
  }
  if (std::count(targets.labels.begin(), targets.labels.end(), std::int8_t(0)) == 0) {
    targets.labels[0] = 0;  // keep the classification term alive
  }
  const fcis::RpnPlan plan = fcis::make_rpn_plan(targets, map_h, map_w, a_per);

  LossBuilder build = [plan](fcis::Tape<double>& tape, const std::vector<fcis::Var>& vars) {
    return fcis::rpn_loss(tape, vars[0], vars[1], plan).total;
  };
  return {{std::move(obj), std::move(deltas)}, std::move(build)};
}

// The full training objective at a pinned plan: every parameter is a leaf,
// the scene, proposal boxes, ROI labels, mask rasters, mined subset and RPN
// anchor sample are all frozen at the base point.
struct CompositeFixture {
  fcis::ModelConfig cfg;
  std::vector<std::string> names;
  std::vector<fcis::Tensor<double>> leaves;
  fcis::Tensor<double> image;
  fcis::RoiBatch<double> batch;
  std::vector<int> selection;
  fcis::RpnPlan rplan;
};

inline LossBuilder composite_builder(const CompositeFixture& fx) {
  return [fx](fcis::Tape<double>& tape, const std::vector<fcis::Var>& vars) {
    fcis::TapedParams lifted;
    for (std::size_t i = 0; i < vars.size(); ++i) lifted.items.emplace_back(fx.names[i], vars[i]);
    fcis::ScoreMapVars maps =
        fcis::forward_backbone(tape, tape.constant(fx.image), lifted, fx.cfg);
    const fcis::RpnLossVars rpn = fcis::rpn_loss(tape, maps.rpn_obj, maps.rpn_deltas, fx.rplan);
    std::vector<fcis::RoiLossVars> losses =
        fcis::build_roi_losses(tape, maps.psmaps, maps.bbox_maps, fx.cfg, fx.batch, fx.selection);
    std::vector<int> identity(losses.size());
    std::iota(identity.begin(), identity.end(), 0);
    const fcis::SelectedLoss sel = fcis::reduce_selected(tape, losses, identity);
    return fcis::add(tape, sel.total, rpn.total);
  };
}

// Central differences sit on the wrong side of a kink when the base point is
// too close to one: inside/outside max ties and the smooth-L1 elbow at 1.
inline bool composite_margins_ok(const CompositeFixture& fx) {
  fcis::Tape<double> tape;
  fcis::TapedParams lifted;
  for (std::size_t i = 0; i < fx.leaves.size(); ++i) {
    lifted.items.emplace_back(fx.names[i], tape.constant(fx.leaves[i]));
  }
  fcis::ScoreMapVars maps = fcis::forward_backbone(tape, tape.constant(fx.image), lifted, fx.cfg);
  const fcis::Tensor<double>& ps = tape.value(maps.psmaps);
  const fcis::Tensor<double>& bb = tape.value(maps.bbox_maps);
  const fcis::Tensor<double>& rd = tape.value(maps.rpn_deltas);

  const int nc = fx.cfg.categories + 1;
  auto component = [](const fcis::BboxDeltas& d, int j) {
    return j == 0 ? d.dx : j == 1 ? d.dy : j == 2 ? d.dw : d.dh;
  };
  for (int i : fx.selection) {
    const fcis::RoiGrid& grid = fx.batch.grids[static_cast<std::size_t>(i)];
    if (fx.cfg.head_mode != fcis::HeadMode::separate) {
      const fcis::Tensor<double> asm_ = fcis::kernels::psroi_assemble_forward(ps, grid);
      for (int cat = 0; cat < nc; ++cat) {
        for (int y = 0; y < grid.height; ++y) {
          for (int x = 0; x < grid.width; ++x) {
            if (std::abs(asm_.at(cat, y, x) - asm_.at(nc + cat, y, x)) < 1e-3) return false;
          }
        }
      }
    }
    const fcis::RoiTarget& target = fx.batch.targets[static_cast<std::size_t>(i)];
    if (target.label > 0) {
      const fcis::Tensor<double> basm = fcis::kernels::psroi_assemble_forward(bb, grid);
      const double inv = 1.0 / (static_cast<double>(grid.height) * grid.width);
      for (int g = 0; g < 4; ++g) {
        double mean = 0;
        for (int y = 0; y < grid.height; ++y) {
          for (int x = 0; x < grid.width; ++x) mean += basm.at(g, y, x);
        }
        mean *= inv;
        if (std::abs(std::abs(mean - component(target.bbox_target, g)) - 1.0) < 1e-3) return false;
      }
    }
  }
  for (std::size_t p = 0; p < fx.rplan.box_targets.size(); ++p) {
    for (int j = 0; j < 4; ++j) {
      const double pred = rd[fx.rplan.box_indices[4 * p + static_cast<std::size_t>(j)]];
      if (std::abs(std::abs(pred - component(fx.rplan.box_targets[p], j)) - 1.0) < 1e-3) {
        return false;
      }
    }
  }
  return true;
}

inline CompositeFixture make_composite_fixture_once(std::uint64_t seed, fcis::HeadMode mode) {
  using fcis::Tensor;
  CompositeFixture fx;
  fx.cfg = tiny_model_config(mode);

  fcis::DatasetConfig dc;
  dc.seed = seed;
  dc.count = 1;
  dc.height = 32;
  dc.width = 32;
  dc.min_instances = 1;
  dc.max_instances = 2;
  dc.min_size = 10;
  dc.max_size = 16;
  dc.noise = 0;
  dc.palette = {1, 2};
  fcis::Rng rng = fcis::seeded_rng(seed);
  const fcis::Sample sample = fcis::generate_scene(rng, dc);
  fx.image = sample.image.cast<double>();

  fcis::ParamSet<double> params = fcis::init_params<double>(fx.cfg, seed + 1);
  for (auto& [name, tensor] : params.items) {
    if (name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0) {
      // zero-init biases put fully-dead conv windows exactly on the relu
      // kink, where central differences disagree with any subgradient; a
      // bias bounded away from zero makes the base point generic
      for (std::int64_t i = 0; i < tensor.numel(); ++i) {
        const double mag = fcis::uniform_real(rng, 0.002, 0.01);
        tensor[i] += fcis::uniform_int(rng, 0, 1) ? mag : -mag;
      }
    }
    fx.names.push_back(name);
    fx.leaves.push_back(std::move(tensor));
  }

  fcis::Tape<double> tape;
  fcis::TapedParams lifted;
  for (std::size_t i = 0; i < fx.leaves.size(); ++i) {
    lifted.items.emplace_back(fx.names[i], tape.constant(fx.leaves[i]));
  }
  fcis::ScoreMapVars maps = fcis::forward_backbone(tape, tape.constant(fx.image), lifted, fx.cfg);
  const int map_h = tape.value(maps.psmaps).dim(1), map_w = tape.value(maps.psmaps).dim(2);

  const std::vector<fcis::BoxXYXY> anchors = fcis::generate_anchors(
      map_h, map_w, fx.cfg.stride, fx.cfg.anchor_scales, fx.cfg.anchor_ratios);
  std::vector<fcis::BoxXYXY> gt_boxes;
  for (const fcis::Instance& inst : sample.instances) gt_boxes.push_back(inst.mask.bounding_box());
  fx.rplan = fcis::make_rpn_plan(fcis::rpn_targets(anchors, gt_boxes, nullptr), map_h, map_w,
                                 fx.cfg.anchors());

  fcis::ProposalConfig pc;
  pc.post_nms = 12;
  std::vector<fcis::BoxXYXY> rois;
  for (const fcis::Proposal& p : fcis::select_proposals(tape.value(maps.rpn_obj),
                                                        tape.value(maps.rpn_deltas), anchors,
                                                        dc.width, dc.height, pc)) {
    rois.push_back(p.box);
  }
  // a few near-truth boxes guarantee positive ROIs under a random-init RPN
  for (const fcis::BoxXYXY& b :
       fcis::jitter_proposals(gt_boxes, rng, 4, dc.width, dc.height, 0.05)) {
    rois.push_back(b);
  }
  fx.batch = fcis::make_roi_batch<double>(rois, sample.instances, fx.cfg, map_h, map_w);

  std::vector<fcis::RoiLossVars> losses =
      fcis::build_roi_losses(tape, maps.psmaps, maps.bbox_maps, fx.cfg, fx.batch, {});
  std::vector<double> totals;
  totals.reserve(losses.size());
  for (const fcis::RoiLossVars& l : losses) totals.push_back(tape.value(l.total).scalar_value());
  fx.selection = fcis::ohem_select(totals, 6);

  // the mined set must exercise every loss term; swap a positive in if none
  const auto is_pos = [&](int i) { return fx.batch.targets[static_cast<std::size_t>(i)].label > 0; };
  if (std::none_of(fx.selection.begin(), fx.selection.end(), is_pos)) {
    for (std::size_t i = 0; i < fx.batch.targets.size(); ++i) {
      if (fx.batch.targets[i].label > 0) {
        fx.selection.back() = static_cast<int>(i);
        break;
      }
    }
  }
  if (std::none_of(fx.selection.begin(), fx.selection.end(), is_pos)) {
    throw std::runtime_error("composite fixture: no positive roi to select");
  }
  return fx;
}

inline CompositeFixture make_composite_fixture(std::uint64_t seed, fcis::HeadMode mode) {
  for (int attempt = 0; attempt < 10; ++attempt) {
    CompositeFixture fx = make_composite_fixture_once(seed + 7919u * attempt, mode);
    if (composite_margins_ok(fx)) return fx;
  }
  throw std::runtime_error("composite fixture: no kink-free base point found");
}

// Composite-graph companion of run_gradient_suite_core: the per-ROI losses,
// the RPN loss, and the full training objective, each against central
// differences on a random direction.
inline GradSuiteResult run_gradient_suite_model(int cases_per_entry, std::uint64_t seed) {
  GradSuiteResult result;
  fcis::Rng rng = fcis::seeded_rng(seed);

  auto run = [&](const char* name, auto make_case) {
    GradSuiteEntry entry{name, cases_per_entry, 0.0};
    for (int c = 0; c < cases_per_entry; ++c) {
      auto [leaves, build] = make_case(c);
      const double err = directional_grad_error(leaves, build, rng);
      entry.worst_rel_err = std::max(entry.worst_rel_err, err);
    }
    result.entries.push_back(std::move(entry));
  };

  auto roi_case = [&](fcis::HeadMode mode) {
    return [&rng, mode](int) { return make_roi_loss_case(rng, mode); };
  };
  run("roi_losses_joint", roi_case(fcis::HeadMode::joint));
  run("roi_losses_separate", roi_case(fcis::HeadMode::separate));
  run("roi_losses_ti", roi_case(fcis::HeadMode::translation_invariant));
  run("rpn_loss", [&](int c) { return make_rpn_loss_case(rng, c % 3 != 2); });

  auto composite_case = [&](fcis::HeadMode mode) {
    return [seed, mode](int c) {
      const CompositeFixture fx =
          make_composite_fixture(seed + 101u * static_cast<std::uint64_t>(c + 1), mode);
      return std::pair<std::vector<fcis::Tensor<double>>, LossBuilder>{fx.leaves,
                                                                       composite_builder(fx)};
    };
  };
  run("l_total_joint", composite_case(fcis::HeadMode::joint));
  run("l_total_separate", composite_case(fcis::HeadMode::separate));
  run("l_total_ti", composite_case(fcis::HeadMode::translation_invariant));

  return result;
}

}  // namespace testutil
