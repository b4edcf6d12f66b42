#include "fcis/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "fcis/kv.hpp"

namespace fcis {

std::vector<double> default_thresholds() {
  std::vector<double> out;
  for (int i = 50; i <= 95; i += 5) out.push_back(i / 100.0);
  return out;
}

double EvalResult::map_at(double threshold) const {
  double sum = 0;
  int n = 0;
  for (const ApEntry& e : entries) {
    if (std::abs(e.threshold - threshold) < 1e-9) {
      sum += e.ap;
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

double EvalResult::map_range() const {
  double sum = 0;
  for (const ApEntry& e : entries) sum += e.ap;
  return entries.empty() ? 0.0 : sum / static_cast<double>(entries.size());
}

namespace {

struct RankedDet {
  double score = 0;
  int image = 0;
  int index = 0;                     // detection index within its image
  std::vector<double> iou;           // vs each same-image same-category gt
  std::vector<int> gt;               // image-local gt indices, aligned with iou
};

}  // namespace

EvalResult evaluate(const std::vector<EvalImage>& images, const std::vector<double>& thresholds) {
  std::set<int> categories;
  for (const EvalImage& img : images) {
    for (const Instance& inst : img.gt) categories.insert(inst.category);
  }

  EvalResult result;
  for (int cat : categories) {
    int npos = 0;
    // gt slots per image for this category, in image-local order
    std::vector<std::vector<int>> gt_of(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
      for (std::size_t g = 0; g < images[i].gt.size(); ++g) {
        if (images[i].gt[g].category == cat) {
          gt_of[i].push_back(static_cast<int>(g));
          ++npos;
        }
      }
    }
    if (npos == 0) continue;

    std::vector<RankedDet> dets;
    for (std::size_t i = 0; i < images.size(); ++i) {
      for (std::size_t d = 0; d < images[i].dets.size(); ++d) {
        const Detection& det = images[i].dets[d];
        if (det.category != cat) continue;
        RankedDet rd;
        rd.score = det.score;
        rd.image = static_cast<int>(i);
        rd.index = static_cast<int>(d);
        for (int g : gt_of[i]) {
          rd.gt.push_back(g);
          rd.iou.push_back(mask_iou(det.mask, images[i].gt[static_cast<std::size_t>(g)].mask));
        }
        dets.push_back(std::move(rd));
      }
    }
    std::sort(dets.begin(), dets.end(), [](const RankedDet& a, const RankedDet& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.image != b.image) return a.image < b.image;
      return a.index < b.index;
    });

    for (double thr : thresholds) {
      std::vector<std::set<int>> matched(images.size());
      std::vector<char> is_tp(dets.size(), 0);
      for (std::size_t d = 0; d < dets.size(); ++d) {
        const RankedDet& rd = dets[d];
        double best = -1;
        int best_gt = -1;
        for (std::size_t j = 0; j < rd.gt.size(); ++j) {
          if (matched[static_cast<std::size_t>(rd.image)].count(rd.gt[j])) continue;
          if (rd.iou[j] > best) {  // ties keep the earlier instance
            best = rd.iou[j];
            best_gt = rd.gt[j];
          }
        }
        if (best_gt >= 0 && best >= thr) {
          is_tp[d] = 1;
          matched[static_cast<std::size_t>(rd.image)].insert(best_gt);
        }
      }

      // all-points AP: area under the right-to-left precision envelope
      std::vector<double> prec(dets.size());
      int tp = 0;
      for (std::size_t d = 0; d < dets.size(); ++d) {
        tp += is_tp[d];
        prec[d] = static_cast<double>(tp) / static_cast<double>(d + 1);
      }
      double env = 0, ap = 0;
      for (std::size_t d = dets.size(); d-- > 0;) {
        env = std::max(env, prec[d]);
        if (is_tp[d]) ap += env / npos;
      }
      result.entries.push_back({cat, thr, ap});
    }
  }
  return result;
}

std::string format_ap_table(const EvalResult& result) {
  std::set<double> thr_set;
  std::set<int> cat_set;
  for (const ApEntry& e : result.entries) {
    thr_set.insert(e.threshold);
    cat_set.insert(e.category);
  }
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::setw(9) << "category";
  for (double t : thr_set) {
    std::ostringstream head;
    head << "AP@" << std::fixed << std::setprecision(2) << t;
    os << std::setw(9) << head.str();
  }
  os << '\n';
  auto ap_of = [&](int cat, double thr) {
    for (const ApEntry& e : result.entries) {
      if (e.category == cat && std::abs(e.threshold - thr) < 1e-9) return e.ap;
    }
    return 0.0;
  };
  for (int cat : cat_set) {
    os << std::setw(9) << cat;
    for (double t : thr_set) os << std::setw(9) << ap_of(cat, t);
    os << '\n';
  }
  if (!cat_set.empty()) {
    os << std::setw(9) << "mean";
    for (double t : thr_set) os << std::setw(9) << result.map_at(t);
    os << '\n';
    os << "mAP@0.50 = " << result.map_at(0.5) << "   mAP@0.70 = " << result.map_at(0.7)
       << "   mAP@[0.50:0.95] = " << result.map_range() << '\n';
  }
  return os.str();
}

void write_ap_csv(std::ostream& os, const EvalResult& result) {
  os << "category,threshold,ap\n";
  for (const ApEntry& e : result.entries) {
    os << e.category << ',' << format_double(e.threshold) << ',' << format_double(e.ap) << '\n';
  }
}

}  // namespace fcis
