#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "fcis/errors.hpp"
#include "fcis/ops.hpp"
#include "fcis/train.hpp"

#include "grad_suite_model.hpp"

using fcis::Tape;
using fcis::Tensor;
using fcis::TrainConfig;
using fcis::Var;

TEST_CASE("learning rate steps down after two thirds of the run") {
  TrainConfig cfg;
  cfg.iterations = 2000;
  cfg.lr = 5e-3;
  CHECK(fcis::lr_at(cfg, 0) == cfg.lr);
  CHECK(fcis::lr_at(cfg, 1332) == cfg.lr);
  CHECK(fcis::lr_at(cfg, 1333) == cfg.lr * 0.1);
  CHECK(fcis::lr_at(cfg, 1999) == cfg.lr * 0.1);

  cfg.iterations = 10;
  CHECK(fcis::lr_at(cfg, 5) == cfg.lr);
  CHECK(fcis::lr_at(cfg, 6) == cfg.lr * 0.1);
}

TEST_CASE("train config validation") {
  TrainConfig good;
  good.validate();
  auto expect_reject = [](auto&& mutate) {
    TrainConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), fcis::ConfigError);
  };
  expect_reject([](TrainConfig& c) { c.iterations = 0; });
  expect_reject([](TrainConfig& c) { c.lr = 0; });
  expect_reject([](TrainConfig& c) { c.momentum = 1.0; });
  expect_reject([](TrainConfig& c) { c.weight_decay = -1e-4; });
  expect_reject([](TrainConfig& c) { c.batch = 0; });
  expect_reject([](TrainConfig& c) { c.rois = 0; });
  expect_reject([](TrainConfig& c) { c.jitter_frac = 1.5; });
}

TEST_CASE("roi batches pin grids, labels and mask rasters") {
  fcis::ModelConfig cfg;
  cfg.categories = 2;
  fcis::BinaryMask mask(64, 64);
  for (int y = 8; y < 32; ++y) {
    for (int x = 8; x < 32; ++x) mask.set(x, y, true);
  }
  const std::vector<fcis::Instance> gt = {{mask, 2}};
  const std::vector<fcis::BoxXYXY> rois = {{8, 8, 32, 32}, {40, 40, 60, 60}};

  fcis::RoiBatch<double> batch = fcis::make_roi_batch<double>(rois, gt, cfg, 8, 8);
  REQUIRE(batch.grids.size() == 2);
  REQUIRE(batch.targets.size() == 2);
  CHECK(batch.targets[0].label == 2);
  CHECK(batch.targets[0].gt_index == 0);
  CHECK(batch.targets[1].label == 0);

  REQUIRE(!batch.mask_targets[0].absent());
  CHECK(batch.mask_targets[1].absent());
  const Tensor<double> want =
      fcis::rasterize_mask_target<double>(mask, batch.grids[0], cfg.stride);
  CHECK(fcis::bitwise_equal(batch.mask_targets[0], want));
  CHECK(batch.mask_targets[0].dim(0) == 1);
  CHECK(batch.mask_targets[0].dim(1) == batch.grids[0].height);
}

namespace {

fcis::RoiLossVars fake_loss(Tape<double>& tape, double det, const double* seg,
                            const double* bbox) {
  fcis::RoiLossVars out;
  out.l_det = tape.constant(Tensor<double>::scalar(det));
  std::vector<Var> parts = {out.l_det};
  if (seg != nullptr) {
    out.l_seg = tape.constant(Tensor<double>::scalar(*seg));
    parts.push_back(*out.l_seg);
  }
  if (bbox != nullptr) {
    out.l_bbox = tape.constant(Tensor<double>::scalar(*bbox));
    parts.push_back(*out.l_bbox);
  }
  out.total = fcis::add_n(tape, parts);
  return out;
}

}  // namespace

TEST_CASE("selected losses decompose into terms that sum to the mean total") {
  Tape<double> tape;
  const double s0 = 0.5, b0 = 0.25, s2 = 1.5, b2 = 0.5;
  std::vector<fcis::RoiLossVars> losses;
  losses.push_back(fake_loss(tape, 1.0, &s0, &b0));
  losses.push_back(fake_loss(tape, 2.0, nullptr, nullptr));
  losses.push_back(fake_loss(tape, 0.5, &s2, &b2));

  fcis::SelectedLoss all = fcis::reduce_selected(tape, losses, {0, 1, 2});
  CHECK(tape.value(all.l_det).scalar_value() == doctest::Approx(3.5 / 3).epsilon(1e-12));
  CHECK(tape.value(all.l_seg).scalar_value() == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(tape.value(all.l_bbox).scalar_value() == doctest::Approx(0.75 / 3).epsilon(1e-12));
  CHECK(tape.value(all.total).scalar_value() == doctest::Approx(6.25 / 3).epsilon(1e-12));
  const double sum = tape.value(all.l_det).scalar_value() +
                     tape.value(all.l_seg).scalar_value() +
                     tape.value(all.l_bbox).scalar_value();
  CHECK(sum == doctest::Approx(tape.value(all.total).scalar_value()).epsilon(1e-12));

  fcis::SelectedLoss one = fcis::reduce_selected(tape, losses, {1});
  CHECK(tape.value(one.l_seg).scalar_value() == 0.0);  // no positives selected
  CHECK(tape.value(one.total).scalar_value() == doctest::Approx(2.0).epsilon(1e-12));

  CHECK_THROWS_AS(fcis::reduce_selected(tape, losses, {}), std::invalid_argument);
}

TEST_CASE("rpn plans translate anchor indices into flat map offsets") {
  // A = 2, map 2x3: anchor i = 7 sits at a = 1, cell 3 = (cy 1, cx 0)
  fcis::AnchorTargets targets;
  targets.labels.assign(12, -1);
  targets.deltas.assign(12, fcis::BboxDeltas{});
  targets.labels[2] = 0;
  targets.labels[7] = 1;
  targets.deltas[7] = {0.1, -0.2, 0.3, -0.4};

  fcis::RpnPlan plan = fcis::make_rpn_plan(targets, 2, 3, 2);
  CHECK(plan.cls_indices == std::vector<std::int64_t>{1, 7, 15, 21});
  CHECK(plan.cls_labels == std::vector<int>{0, 1});
  CHECK(plan.box_indices == std::vector<std::int64_t>{27, 33, 39, 45});
  REQUIRE(plan.box_targets.size() == 1);
  CHECK(plan.box_targets[0].dw == 0.3);
}

namespace {

fcis::RpnLossVars tape_loss(Tape<double>& tape, const Tensor<double>& obj,
                            const Tensor<double>& deltas, const fcis::RpnPlan& plan) {
  return fcis::rpn_loss(tape, tape.constant(obj), tape.constant(deltas), plan);
}

}  // namespace

TEST_CASE("rpn loss closed forms") {
  auto one_anchor_plan = [](std::int8_t label, const fcis::BboxDeltas& d) {
    fcis::AnchorTargets t;
    t.labels = {label};
    t.deltas = {d};
    return fcis::make_rpn_plan(t, 1, 1, 1);
  };
  const double bg = 0.3, fg = -0.2;
  Tensor<double> obj({2, 1, 1});
  obj[0] = bg;
  obj[1] = fg;
  Tensor<double> deltas({4, 1, 1});
  deltas[0] = 0.2;
  deltas[1] = -0.1;
  deltas[2] = 0.4;
  deltas[3] = 0.0;

  {
    Tape<double> tape;
    fcis::RpnLossVars out = tape_loss(tape, obj, deltas, one_anchor_plan(1, {0, 0, 0, 0}));
    const double ce = std::log(1 + std::exp(bg - fg));
    const double box = 0.5 * (0.04 + 0.01 + 0.16 + 0.0);
    CHECK(tape.value(out.cls).scalar_value() == doctest::Approx(ce).epsilon(1e-12));
    CHECK(tape.value(out.box).scalar_value() == doctest::Approx(box).epsilon(1e-12));
    CHECK(tape.value(out.total).scalar_value() == doctest::Approx(ce + box).epsilon(1e-12));
  }
  {
    // background anchor: no box term, cross entropy flips sides
    Tape<double> tape;
    fcis::RpnLossVars out = tape_loss(tape, obj, deltas, one_anchor_plan(0, {0, 0, 0, 0}));
    CHECK(tape.value(out.cls).scalar_value() ==
          doctest::Approx(std::log(1 + std::exp(fg - bg))).epsilon(1e-12));
    CHECK(tape.value(out.box).scalar_value() == 0.0);
  }
  {
    // a residual beyond 1 lands on the linear branch: |0.2 - 3| - 0.5
    Tape<double> tape;
    fcis::RpnLossVars out = tape_loss(tape, obj, deltas, one_anchor_plan(1, {3, 0, 0, 0}));
    const double box = 2.3 + 0.5 * (0.01 + 0.16 + 0.0);
    CHECK(tape.value(out.box).scalar_value() == doctest::Approx(box).epsilon(1e-12));
  }
}

TEST_CASE("loss csv rows") {
  std::ostringstream os;
  fcis::write_loss_csv_header(os);
  fcis::write_loss_csv_row(os, {3, 0.5, 0.25, 0.125, 1.5, 2.375});
  CHECK(os.str() == "iter,l_det,l_seg,l_bbox,l_rpn,l_total\n3,0.5,0.25,0.125,1.5,2.375\n");
}

TEST_CASE("composite losses pass the finite-difference contract") {
  const testutil::GradSuiteResult result = testutil::run_gradient_suite_model(3, 9001);
  REQUIRE(result.entries.size() == 7);
  for (const testutil::GradSuiteEntry& e : result.entries) {
    CHECK(e.cases == 3);
    INFO(e.kernel);
    CHECK(e.worst_rel_err < 1e-4);
  }
}
