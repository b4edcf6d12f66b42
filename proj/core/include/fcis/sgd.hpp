#pragma once

#include "fcis/tensor.hpp"

namespace fcis {

struct SgdHyper {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

// Momentum SGD with decoupled-from-nothing classic weight decay folded into
// the velocity update:
//   v <- momentum * v + g + weight_decay * p
//   p <- p - lr * v
// velocity starts at zero and mirrors the parameter shape.
template <typename T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity,
              const SgdHyper& hyper);

}  // namespace fcis
