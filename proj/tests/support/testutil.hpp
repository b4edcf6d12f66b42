#pragma once

#include <vector>

#include "fcis/rng.hpp"
#include "fcis/tensor.hpp"

namespace testutil {

inline fcis::Tensor<double> rand_tensor(fcis::Rng& rng, std::vector<int> shape, double lo = -1.0,
                                        double hi = 1.0) {
  fcis::Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = fcis::uniform_real(rng, lo, hi);
  return t;
}

// Values bounded away from zero, for kernels with a kink at the origin.
inline fcis::Tensor<double> rand_tensor_away_from_zero(fcis::Rng& rng, std::vector<int> shape,
                                                       double margin = 0.05) {
  fcis::Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    double v = fcis::uniform_real(rng, margin, 1.0);
    t[i] = fcis::uniform_int(rng, 0, 1) ? v : -v;
  }
  return t;
}

}  // namespace testutil
