#pragma once

#include <vector>

#include "fcis/tape.hpp"
#include "fcis/tensor.hpp"

namespace fcis {

struct ConvSpec {
  int stride = 1;
  int dilation = 1;
  int pad = 0;
};

// out = floor((in + 2*pad - dilation*(k-1) - 1) / stride) + 1
int conv_out_extent(int in, int k, const ConvSpec& spec);

namespace kernels {

// Tape-free forward kernels. The taped ops below route through these, so
// there is a single definition of each piece of arithmetic.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         const ConvSpec& spec);

// align_corners=false convention: source coord of output pixel o is
// (o + 0.5) * in/out - 0.5, clamped to the source range, then a bilinear
// blend of the 4 neighbouring pixel centers (edge replication at borders).
template <typename T>
Tensor<T> bilinear_resize_forward(const Tensor<T>& x, int out_h, int out_w);

template <typename T>
void softmax_inplace(T* v, int n);

}  // namespace kernels

// ---- differentiable kernels -------------------------------------------
// Each op records one node on the tape; the backward closure accumulates
// into the gradients of its differentiable inputs.

template <typename T>
Var conv2d(Tape<T>& t, Var x, Var w, Var b, const ConvSpec& spec);

template <typename T>
Var bilinear_resize(Tape<T>& t, Var x, int out_h, int out_w);

template <typename T>
Var relu(Tape<T>& t, Var x);

template <typename T>
Var exp(Tape<T>& t, Var x);

template <typename T>
Var log(Tape<T>& t, Var x);

template <typename T>
Var sigmoid(Tape<T>& t, Var x);

template <typename T>
Var add(Tape<T>& t, Var a, Var b);

template <typename T>
Var sub(Tape<T>& t, Var a, Var b);

template <typename T>
Var mul(Tape<T>& t, Var a, Var b);

template <typename T>
Var add_n(Tape<T>& t, const std::vector<Var>& xs);

template <typename T>
Var scale(Tape<T>& t, Var x, double c);

// Elementwise max of two same-shape tensors; ties send the gradient to a.
template <typename T>
Var pixel_max(Tape<T>& t, Var a, Var b);

// Softmax over axis 0: a plain softmax for rank-1, an independent softmax
// across channels at every spatial position for rank-3.
template <typename T>
Var channel_softmax(Tape<T>& t, Var x);

// out[c] = sum_p x[c,p] * mask[p] / sum_p mask[p]. The mask is a plain
// [H, W] tensor of non-negative weights with a positive total.
template <typename T>
Var masked_avg_pool(Tape<T>& t, Var x, const Tensor<T>& mask);

// Contiguous slab x[i0:i1] along axis 0 (any rank >= 1).
template <typename T>
Var slice0(Tape<T>& t, Var x, int i0, int i1);

template <typename T>
Var sum_all(Tape<T>& t, Var x);

// -log softmax(logits)[label] for a rank-1 logits vector.
template <typename T>
Var softmax_ce(Tape<T>& t, Var logits, int label);

// Mean over all elements of the binary cross entropy between
// sigmoid(logits) and targets (same shape, values in [0, 1]).
template <typename T>
Var bce_logits_mean(Tape<T>& t, Var logits, const Tensor<T>& targets);

// Sum over elements of smooth-L1(pred - target) with transition point 1.
template <typename T>
Var smooth_l1_sum(Tape<T>& t, Var pred, const Tensor<T>& target);

// out[i] = x.flat[idx[i]]; the adjoint scatter-adds, so repeated indices
// accumulate. Used to pull per-anchor logits out of the RPN maps.
template <typename T>
Var gather_scalars(Tape<T>& t, Var x, std::vector<std::int64_t> idx);

}  // namespace fcis
