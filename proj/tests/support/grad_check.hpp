#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fcis/rng.hpp"
#include "fcis/tape.hpp"
#include "fcis/tensor.hpp"

namespace testutil {

// Central-difference directional derivative check. The loss builder gets a
// tape plus leaf handles and must return a scalar loss. Returns the relative
// error between d(loss)/d(direction) from the tape and from two perturbed
// forward passes at +-eps.
using LossBuilder =
    std::function<fcis::Var(fcis::Tape<double>&, const std::vector<fcis::Var>&)>;

inline double directional_grad_error(const std::vector<fcis::Tensor<double>>& leaves,
                                     const LossBuilder& build, fcis::Rng& rng,
                                     double eps = 1e-5) {
  using fcis::Tape;
  using fcis::Tensor;
  using fcis::Var;

  // analytic gradient
  Tape<double> tape;
  std::vector<Var> vars;
  vars.reserve(leaves.size());
  for (const auto& leaf : leaves) vars.push_back(tape.leaf(leaf));
  Var loss = build(tape, vars);
  tape.backward(loss);

  // random unit direction across all leaf elements
  std::vector<Tensor<double>> dir;
  double norm2 = 0;
  for (const auto& leaf : leaves) {
    Tensor<double> d(leaf.shape());
    for (std::int64_t i = 0; i < d.numel(); ++i) {
      d[i] = fcis::normal(rng);
      norm2 += d[i] * d[i];
    }
    dir.push_back(std::move(d));
  }
  const double norm = std::sqrt(std::max(norm2, 1e-300));
  for (auto& d : dir) {
    for (std::int64_t i = 0; i < d.numel(); ++i) d[i] /= norm;
  }

  double analytic = 0;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    if (!tape.has_grad(vars[k])) continue;
    const Tensor<double>& g = tape.grad(vars[k]);
    for (std::int64_t i = 0; i < g.numel(); ++i) analytic += g[i] * dir[k][i];
  }

  auto eval_at = [&](double step) {
    Tape<double> t2;
    std::vector<Var> v2;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
      Tensor<double> shifted = leaves[k];
      for (std::int64_t i = 0; i < shifted.numel(); ++i) shifted[i] += step * dir[k][i];
      v2.push_back(t2.leaf(std::move(shifted)));
    }
    return t2.value(build(t2, v2)).scalar_value();
  };

  const double numeric = (eval_at(eps) - eval_at(-eps)) / (2 * eps);
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace testutil
