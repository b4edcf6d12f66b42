#include "fcis/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fcis {

std::vector<int> nms(const std::vector<BoxXYXY>& boxes, const std::vector<double>& scores,
                     double iou_thresh) {
  if (boxes.size() != scores.size()) {
    throw std::invalid_argument("nms: boxes/scores size mismatch");
  }
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  std::vector<int> keep;
  std::vector<char> dead(boxes.size(), 0);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const int i = order[oi];
    if (dead[static_cast<std::size_t>(i)]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const int j = order[oj];
      if (dead[static_cast<std::size_t>(j)]) continue;
      if (box_iou(boxes[static_cast<std::size_t>(i)], boxes[static_cast<std::size_t>(j)]) >
          iou_thresh) {
        dead[static_cast<std::size_t>(j)] = 1;
      }
    }
  }
  return keep;
}

template <typename T>
std::vector<Proposal> select_proposals(const Tensor<T>& rpn_obj, const Tensor<T>& rpn_deltas,
                                       const std::vector<BoxXYXY>& anchors, int img_w, int img_h,
                                       const ProposalConfig& pc) {
  if (rpn_obj.rank() != 3 || rpn_deltas.rank() != 3) {
    throw std::invalid_argument("select_proposals: RPN maps must be rank 3");
  }
  const int h = rpn_obj.dim(1), w = rpn_obj.dim(2);
  if (rpn_deltas.dim(1) != h || rpn_deltas.dim(2) != w) {
    throw std::invalid_argument("select_proposals: RPN map extents disagree");
  }
  if (rpn_obj.dim(0) % 2 != 0 || rpn_deltas.dim(0) != 2 * rpn_obj.dim(0)) {
    throw std::invalid_argument("select_proposals: channel counts not 2A / 4A");
  }
  const int a_per_cell = rpn_obj.dim(0) / 2;
  if (anchors.size() != static_cast<std::size_t>(h) * w * a_per_cell) {
    throw std::invalid_argument("select_proposals: anchor list does not match the map (" +
                                std::to_string(anchors.size()) + " boxes)");
  }

  const std::size_t total = anchors.size();
  std::vector<Proposal> cand(total);
  for (int cy = 0; cy < h; ++cy) {
    for (int cx = 0; cx < w; ++cx) {
      for (int a = 0; a < a_per_cell; ++a) {
        const std::size_t i = (static_cast<std::size_t>(cy) * w + cx) * a_per_cell + a;
        const double bg = rpn_obj.at(a * 2 + 0, cy, cx);
        const double fg = rpn_obj.at(a * 2 + 1, cy, cx);
        // two-way softmax reduces to a sigmoid of the logit gap
        cand[i].score = 1.0 / (1.0 + std::exp(bg - fg));
        const BboxDeltas d{rpn_deltas.at(a * 4 + 0, cy, cx), rpn_deltas.at(a * 4 + 1, cy, cx),
                           rpn_deltas.at(a * 4 + 2, cy, cx), rpn_deltas.at(a * 4 + 3, cy, cx)};
        cand[i].box = apply_bbox_deltas(anchors[i], d, img_w, img_h);
      }
    }
  }

  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return cand[static_cast<std::size_t>(a)].score > cand[static_cast<std::size_t>(b)].score;
  });
  if (static_cast<int>(order.size()) > pc.pre_nms) order.resize(static_cast<std::size_t>(pc.pre_nms));

  std::vector<BoxXYXY> boxes;
  std::vector<double> scores;
  boxes.reserve(order.size());
  for (int i : order) {
    boxes.push_back(cand[static_cast<std::size_t>(i)].box);
    scores.push_back(cand[static_cast<std::size_t>(i)].score);
  }
  const std::vector<int> kept = nms(boxes, scores, pc.nms_thresh);

  std::vector<char> is_kept(order.size(), 0);
  for (int i : kept) is_kept[static_cast<std::size_t>(i)] = 1;

  std::vector<Proposal> out;
  out.reserve(static_cast<std::size_t>(pc.post_nms));
  for (int i : kept) {
    if (static_cast<int>(out.size()) >= pc.post_nms) break;
    out.push_back(cand[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
  }
  // short after NMS: refill from the suppressed candidates, best first
  for (std::size_t i = 0; i < order.size() && static_cast<int>(out.size()) < pc.post_nms; ++i) {
    if (!is_kept[i]) out.push_back(cand[static_cast<std::size_t>(order[i])]);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Proposal& a, const Proposal& b) { return a.score > b.score; });
  return out;
}

AnchorTargets rpn_targets(const std::vector<BoxXYXY>& anchors, const std::vector<BoxXYXY>& gt,
                          Rng* rng, int cap) {
  const std::size_t n = anchors.size();
  AnchorTargets t;
  t.labels.assign(n, -1);
  t.deltas.assign(n, BboxDeltas{});

  std::vector<double> best_iou(n, 0.0);
  std::vector<int> best_gt(n, -1);
  std::vector<double> gt_best(gt.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double iou = box_iou(anchors[i], gt[g]);
      if (iou > best_iou[i]) {
        best_iou[i] = iou;
        best_gt[i] = static_cast<int>(g);
      }
      gt_best[g] = std::max(gt_best[g], iou);
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    bool fg = best_iou[i] >= 0.7;
    for (std::size_t g = 0; g < gt.size() && !fg; ++g) {
      // every anchor tied at an instance's best IoU counts, never at zero
      fg = gt_best[g] > 0 && box_iou(anchors[i], gt[g]) == gt_best[g];
    }
    if (fg) {
      t.labels[i] = 1;
      t.deltas[i] = encode_bbox_deltas(anchors[i], gt[static_cast<std::size_t>(best_gt[i])]);
    } else if (best_iou[i] < 0.3) {
      t.labels[i] = 0;
    }
  }

  if (rng != nullptr) {
    auto thin = [&](std::int8_t which) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < n; ++i) {
        if (t.labels[i] == which) idx.push_back(i);
      }
      if (static_cast<int>(idx.size()) <= cap) return;
      for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j =
            static_cast<std::size_t>(uniform_int(*rng, 0, static_cast<int>(i) - 1));
        std::swap(idx[i - 1], idx[j]);
      }
      for (std::size_t i = static_cast<std::size_t>(cap); i < idx.size(); ++i) {
        t.labels[idx[i]] = -1;
      }
    };
    thin(1);
    thin(0);
  }
  return t;
}

std::vector<BoxXYXY> jitter_proposals(const std::vector<BoxXYXY>& gt, Rng& rng, int n, int img_w,
                                      int img_h, double sigma) {
  if (gt.empty()) return {};
  std::vector<BoxXYXY> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const BoxXYXY& b = gt[static_cast<std::size_t>(i) % gt.size()];
    const double cx = b.cx() + sigma * b.width() * normal(rng, 0.0, 1.0);
    const double cy = b.cy() + sigma * b.height() * normal(rng, 0.0, 1.0);
    const double w = b.width() * std::exp(sigma * normal(rng, 0.0, 1.0));
    const double h = b.height() * std::exp(sigma * normal(rng, 0.0, 1.0));
    out.push_back(clip_box({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}, img_w, img_h));
  }
  return out;
}

template std::vector<Proposal> select_proposals(const Tensor<float>&, const Tensor<float>&,
                                                const std::vector<BoxXYXY>&, int, int,
                                                const ProposalConfig&);
template std::vector<Proposal> select_proposals(const Tensor<double>&, const Tensor<double>&,
                                                const std::vector<BoxXYXY>&, int, int,
                                                const ProposalConfig&);

}  // namespace fcis
