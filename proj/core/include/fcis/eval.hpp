#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fcis/dataset.hpp"
#include "fcis/infer.hpp"

namespace fcis {

// One image's detections next to its ground truth.
struct EvalImage {
  std::vector<Detection> dets;
  std::vector<Instance> gt;
};

struct ApEntry {
  int category = 0;
  double threshold = 0;
  double ap = 0;
};

struct EvalResult {
  std::vector<ApEntry> entries;  // only categories that have ground truth

  double map_at(double threshold) const;  // mean AP over categories
  double map_range() const;               // mean over every (category, threshold)
};

// {0.50, 0.55, ..., 0.95}
std::vector<double> default_thresholds();

// Mask-level average precision. Detections are ranked globally by score
// (ties: lower image index, then lower detection index) and matched greedily
// to the not-yet-matched same-image same-category instance of highest mask
// IoU, counting a true positive when that IoU reaches the threshold. AP is
// the all-points area under the precision envelope. Categories without any
// ground truth are skipped.
EvalResult evaluate(const std::vector<EvalImage>& images, const std::vector<double>& thresholds);

std::string format_ap_table(const EvalResult& result);
void write_ap_csv(std::ostream& os, const EvalResult& result);  // category,threshold,ap

}  // namespace fcis
