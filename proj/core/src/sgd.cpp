#include "fcis/sgd.hpp"

#include <stdexcept>

namespace fcis {

template <typename T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity,
              const SgdHyper& hyper) {
  if (velocity.absent()) velocity = Tensor<T>(param.shape());
  if (!param.same_shape(grad) || !param.same_shape(velocity)) {
    throw std::invalid_argument("sgd_step: param " + shape_str(param.shape()) + ", grad " +
                                shape_str(grad.shape()) + " and velocity " +
                                shape_str(velocity.shape()) + " must share one shape");
  }
  const T mu = static_cast<T>(hyper.momentum);
  const T wd = static_cast<T>(hyper.weight_decay);
  const T lr = static_cast<T>(hyper.lr);
  for (std::int64_t i = 0; i < param.numel(); ++i) {
    velocity[i] = mu * velocity[i] + grad[i] + wd * param[i];
    param[i] -= lr * velocity[i];
  }
}

template void sgd_step(Tensor<float>&, const Tensor<float>&, Tensor<float>&, const SgdHyper&);
template void sgd_step(Tensor<double>&, const Tensor<double>&, Tensor<double>&, const SgdHyper&);

}  // namespace fcis
