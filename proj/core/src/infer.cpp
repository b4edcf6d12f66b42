#include "fcis/infer.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fcis/errors.hpp"
#include "fcis/head.hpp"
#include "fcis/kv.hpp"
#include "fcis/ops.hpp"
#include "fcis/proposals.hpp"
#include "fcis/psroi.hpp"
#include "fcis/tape.hpp"

namespace fcis {

void InferConfig::validate() const {
  if (proposals < 1) throw ConfigError("proposals must be positive");
  if (!(score_thresh >= 0 && score_thresh <= 1)) {
    throw ConfigError("score_thresh must lie in [0, 1]");
  }
  if (!(nms_thresh > 0 && nms_thresh < 1)) throw ConfigError("nms_thresh must lie in (0, 1)");
  if (!(mask_binarize > 0 && mask_binarize < 1)) {
    throw ConfigError("mask_binarize must lie in (0, 1)");
  }
  if (!(vote_iou > 0 && vote_iou < 1)) throw ConfigError("vote_iou must lie in (0, 1)");
}

BinaryMask vote_mask(const std::vector<VoteInput>& cands, std::size_t det, int category,
                     int stride, int img_h, int img_w, const InferConfig& icfg) {
  std::vector<std::size_t> sup;
  double wsum = 0;
  for (std::size_t j = 0; j < cands.size(); ++j) {
    if (box_iou(cands[det].box, cands[j].box) > icfg.vote_iou) {
      sup.push_back(j);
      wsum += cands[j].class_probs[category];
    }
  }
  Tensor<float> votes({img_h, img_w});
  for (std::size_t j : sup) {
    const VoteInput& s = cands[j];
    const float w = static_cast<float>(s.class_probs[category] / wsum);
    Tensor<float> prob({1, s.grid.height, s.grid.width});
    for (std::int64_t p = 0; p < prob.numel(); ++p) {
      prob[p] = 1.0f / (1.0f + std::exp(-s.seg_logits[category * prob.numel() + p]));
    }
    const Tensor<float> up =
        kernels::bilinear_resize_forward(prob, s.grid.height * stride, s.grid.width * stride);
    const int oy = s.grid.y0 * stride, ox = s.grid.x0 * stride;
    for (int y = 0; y < up.dim(1); ++y) {
      for (int x = 0; x < up.dim(2); ++x) votes.at(oy + y, ox + x) += w * up.at(0, y, x);
    }
  }
  BinaryMask mask(img_w, img_h);
  for (int y = 0; y < img_h; ++y) {
    for (int x = 0; x < img_w; ++x) {
      if (votes.at(y, x) >= icfg.mask_binarize) mask.set(x, y, true);
    }
  }
  return mask;
}

std::vector<Detection> run_inference(const ParamSet<float>& params, const ModelConfig& cfg,
                                     const Tensor<float>& image, const InferConfig& icfg) {
  cfg.validate();
  icfg.validate();
  const int img_h = image.dim(1), img_w = image.dim(2);

  Tape<float> tape;
  TapedParams lifted = lift_params(tape, params, /*trainable=*/false);
  Var img = tape.constant(image);
  ScoreMapVars maps = forward_backbone(tape, img, lifted, cfg);
  const int map_h = tape.value(maps.psmaps).dim(1);
  const int map_w = tape.value(maps.psmaps).dim(2);

  const std::vector<BoxXYXY> anchors =
      generate_anchors(map_h, map_w, cfg.stride, cfg.anchor_scales, cfg.anchor_ratios);
  ProposalConfig pc;
  pc.post_nms = icfg.proposals;
  const std::vector<Proposal> props = select_proposals(
      tape.value(maps.rpn_obj), tape.value(maps.rpn_deltas), anchors, img_w, img_h, pc);

  const int k = cfg.effective_k();
  std::vector<VoteInput> cands;
  cands.reserve(props.size() * 2);
  auto eval_roi = [&](const BoxXYXY& box, BboxDeltas* deltas_out) {
    VoteInput c;
    c.box = box;
    c.grid = project_roi(box, cfg.stride, map_h, map_w, k);
    RoiForward fwd = forward_roi(tape, maps.psmaps, maps.bbox_maps, c.grid, cfg);
    c.class_probs = tape.value(fwd.class_probs);
    c.seg_logits = tape.value(fwd.seg_logits);
    if (deltas_out != nullptr) {
      const Tensor<float>& d = tape.value(fwd.bbox_deltas);
      *deltas_out = BboxDeltas{d[0], d[1], d[2], d[3]};
    }
    cands.push_back(std::move(c));
  };

  std::vector<BboxDeltas> refine(props.size());
  for (std::size_t i = 0; i < props.size(); ++i) eval_roi(props[i].box, &refine[i]);
  for (std::size_t i = 0; i < props.size(); ++i) {
    eval_roi(apply_bbox_deltas(props[i].box, refine[i], img_w, img_h), nullptr);
  }

  // best foreground class per candidate; ties toward the lower category
  const int nc = cfg.categories + 1;
  std::vector<int> best_cat(cands.size(), 1);
  std::vector<double> best_score(cands.size(), 0.0);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    for (int c = 1; c < nc; ++c) {
      const double p = cands[i].class_probs[c];
      if (p > best_score[i]) {
        best_score[i] = p;
        best_cat[i] = c;
      }
    }
  }

  std::vector<Detection> out;
  for (int cat = 1; cat < nc; ++cat) {
    std::vector<int> pool;
    std::vector<BoxXYXY> boxes;
    std::vector<double> scores;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      if (best_cat[i] == cat && best_score[i] >= icfg.score_thresh) {
        pool.push_back(static_cast<int>(i));
        boxes.push_back(cands[i].box);
        scores.push_back(best_score[i]);
      }
    }
    for (int ki : nms(boxes, scores, icfg.nms_thresh)) {
      const std::size_t det_i = static_cast<std::size_t>(pool[static_cast<std::size_t>(ki)]);
      BinaryMask mask = vote_mask(cands, det_i, cat, cfg.stride, img_h, img_w, icfg);
      if (mask.empty()) continue;
      Detection d;
      d.category = cat;
      d.score = best_score[det_i];
      d.box = mask.bounding_box();
      d.mask = std::move(mask);
      out.push_back(std::move(d));
    }
  }

  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

std::vector<std::int64_t> rle_encode(const BinaryMask& mask) {
  std::vector<std::int64_t> runs;
  bool cur = false;  // first run counts background pixels, possibly zero
  std::int64_t len = 0;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (mask.get(x, y) == cur) {
        ++len;
      } else {
        runs.push_back(len);
        cur = !cur;
        len = 1;
      }
    }
  }
  runs.push_back(len);
  return runs;
}

BinaryMask rle_decode(const std::vector<std::int64_t>& runs, int width, int height) {
  if (width < 1 || height < 1) throw DataError("rle_decode: bad mask extent");
  BinaryMask mask(width, height);
  const std::int64_t total = static_cast<std::int64_t>(width) * height;
  std::int64_t pos = 0;
  bool cur = false;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const std::int64_t len = runs[r];
    if (len < 0 || (len == 0 && r != 0)) throw DataError("rle_decode: bad run length");
    if (pos + len > total) throw DataError("rle_decode: runs overflow the mask");
    if (cur) {
      for (std::int64_t i = pos; i < pos + len; ++i) {
        mask.set(static_cast<int>(i % width), static_cast<int>(i / width), true);
      }
    }
    pos += len;
    cur = !cur;
  }
  if (pos != total) throw DataError("rle_decode: runs cover " + std::to_string(pos) +
                                    " of " + std::to_string(total) + " pixels");
  return mask;
}

void write_detection_lines(std::ostream& os, int image_id, const std::vector<Detection>& dets) {
  for (const Detection& d : dets) {
    const std::vector<std::int64_t> runs = rle_encode(d.mask);
    os << image_id << ' ' << d.category << ' ' << format_double(d.score) << ' '
       << format_double(d.box.x1) << ' ' << format_double(d.box.y1) << ' '
       << format_double(d.box.x2) << ' ' << format_double(d.box.y2) << ' ' << d.mask.height()
       << ' ' << d.mask.width() << ' ' << runs.size();
    for (std::int64_t r : runs) os << ' ' << r;
    os << '\n';
  }
}

std::vector<DetectionRecord> read_detection_lines(std::istream& is) {
  std::vector<DetectionRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    DetectionRecord rec;
    int h = 0, w = 0;
    std::size_t n = 0;
    if (!(ls >> rec.image_id >> rec.det.category >> rec.det.score >> rec.det.box.x1 >>
          rec.det.box.y1 >> rec.det.box.x2 >> rec.det.box.y2 >> h >> w >> n)) {
      throw DataError("detections line " + std::to_string(lineno) + ": malformed header");
    }
    std::vector<std::int64_t> runs(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (!(ls >> runs[i])) {
        throw DataError("detections line " + std::to_string(lineno) + ": truncated run list");
      }
    }
    std::string rest;
    if (ls >> rest) {
      throw DataError("detections line " + std::to_string(lineno) + ": trailing fields");
    }
    try {
      rec.det.mask = rle_decode(runs, w, h);
    } catch (const DataError& e) {
      throw DataError("detections line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(std::move(rec));
  }
  return out;
}

Tensor<float> render_overlay(const Tensor<float>& image, const std::vector<Detection>& dets) {
  static const float palette[6][3] = {{1.0f, 0.25f, 0.25f}, {0.25f, 1.0f, 0.25f},
                                      {0.3f, 0.45f, 1.0f},  {1.0f, 1.0f, 0.25f},
                                      {1.0f, 0.3f, 1.0f},   {0.3f, 1.0f, 1.0f}};
  Tensor<float> out = image;
  const int h = image.dim(1), w = image.dim(2);
  for (const Detection& d : dets) {
    const float* color = palette[(d.category - 1) % 6];
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!d.mask.get(x, y)) continue;
        for (int c = 0; c < 3; ++c) out.at(c, y, x) = 0.5f * out.at(c, y, x) + 0.5f * color[c];
      }
    }
    const int x1 = std::clamp(static_cast<int>(std::lround(d.box.x1)), 0, w - 1);
    const int x2 = std::clamp(static_cast<int>(std::lround(d.box.x2)) - 1, 0, w - 1);
    const int y1 = std::clamp(static_cast<int>(std::lround(d.box.y1)), 0, h - 1);
    const int y2 = std::clamp(static_cast<int>(std::lround(d.box.y2)) - 1, 0, h - 1);
    for (int x = x1; x <= x2; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(c, y1, x) = color[c];
        out.at(c, y2, x) = color[c];
      }
    }
    for (int y = y1; y <= y2; ++y) {
      for (int c = 0; c < 3; ++c) {
        out.at(c, y, x1) = color[c];
        out.at(c, y, x2) = color[c];
      }
    }
  }
  return out;
}

}  // namespace fcis
