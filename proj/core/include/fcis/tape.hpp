#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcis/errors.hpp"
#include "fcis/tensor.hpp"

namespace fcis {

// Handle to a value recorded on a tape. The tape serial is carried so that
// handles from a different tape are rejected instead of silently aliasing.
struct Var {
  std::uint32_t id = 0;
  std::uint32_t tape = 0;
};

// Reverse-mode tape. Values are recorded in execution order; backward()
// replays the recorded kernels exactly once, in reverse, accumulating
// gradients. Single-owner: a tape must not be shared across threads.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& upstream)>;

  Tape() : serial_(next_serial()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable leaf (parameter or input we want gradients for).
  Var leaf(Tensor<T> value) { return push(std::move(value), /*differentiable=*/true); }

  // Tracked but non-differentiable value; backward never allocates its grad.
  Var constant(Tensor<T> value) { return push(std::move(value), /*differentiable=*/false); }

  // Record a kernel output together with its backward closure.
  Var emit(const char* tag, Tensor<T> value, BackwardFn backward) {
    if (ran_backward_) throw std::logic_error("tape already ran backward");
#ifndef NDEBUG
    if (!value.all_finite()) {
      throw NumericError(std::string("non-finite values produced by kernel '") + tag + "'");
    }
#else
    (void)tag;
#endif
    Var v = push(std::move(value), /*differentiable=*/true);
    nodes_.push_back(Node{v.id, std::move(backward)});
    return v;
  }

  const Tensor<T>& value(Var v) const {
    check_owned(v);
    return values_[v.id];
  }

  bool differentiable(Var v) const {
    check_owned(v);
    return diff_[v.id] != 0;
  }

  // Gradient accumulator, or nullptr for non-differentiable values. Kernels
  // use this inside backward closures to skip work for constants.
  Tensor<T>* grad_accum_if(Var v) {
    check_owned(v);
    if (!diff_[v.id]) return nullptr;
    if (grads_.size() < values_.size()) grads_.resize(values_.size());
    Tensor<T>& g = grads_[v.id];
    if (g.absent()) g = Tensor<T>(values_[v.id].shape());
    return &g;
  }

  bool has_grad(Var v) const {
    check_owned(v);
    return v.id < grads_.size() && !grads_[v.id].absent();
  }

  const Tensor<T>& grad(Var v) const {
    check_owned(v);
    if (!has_grad(v)) throw std::logic_error("no gradient recorded for this value");
    return grads_[v.id];
  }

  // Seed d(loss)/d(loss) = 1 and replay every recorded kernel once in
  // reverse order. Kernels whose output received no gradient are skipped;
  // they cannot contribute.
  void backward(Var loss) {
    check_owned(loss);
    if (ran_backward_) throw std::logic_error("tape already ran backward");
    if (values_[loss.id].numel() != 1) {
      throw std::invalid_argument("backward() needs a scalar loss, got shape " +
                                  shape_str(values_[loss.id].shape()));
    }
    ran_backward_ = true;
    grads_.resize(values_.size());
    Tensor<T>* seed = grad_accum_if(loss);
    if (seed == nullptr) throw std::invalid_argument("loss is not differentiable");
    (*seed)[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      const Tensor<T>& g = grads_[it->out];
      if (g.absent()) continue;
      it->fn(*this, g);
    }
  }

  std::size_t recorded_values() const { return values_.size(); }
  std::size_t recorded_kernels() const { return nodes_.size(); }

 private:
  struct Node {
    std::uint32_t out;
    BackwardFn fn;
  };

  static std::uint32_t next_serial() {
    static std::atomic<std::uint32_t> counter{1};
    return counter.fetch_add(1);
  }

  void check_owned(Var v) const {
    if (v.tape != serial_ || v.id >= values_.size()) {
      throw std::invalid_argument("value does not belong to this tape");
    }
  }

  Var push(Tensor<T> value, bool differentiable) {
    if (value.absent()) throw std::invalid_argument("cannot record an absent tensor");
    values_.push_back(std::move(value));
    diff_.push_back(differentiable ? 1 : 0);
    return Var{static_cast<std::uint32_t>(values_.size() - 1), serial_};
  }

  std::uint32_t serial_;
  std::vector<Tensor<T>> values_;
  std::vector<char> diff_;
  std::vector<Tensor<T>> grads_;
  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

}  // namespace fcis
