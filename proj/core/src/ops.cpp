#include "fcis/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fcis {

namespace {

int ceil_div(int a, int b) {  // b > 0
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

int floor_div(int a, int b) {  // b > 0
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace

int conv_out_extent(int in, int k, const ConvSpec& spec) {
  return (in + 2 * spec.pad - spec.dilation * (k - 1) - 1) / spec.stride + 1;
}

namespace kernels {

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         const ConvSpec& spec) {
  if (x.rank() != 3) throw std::invalid_argument("conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
  if (w.rank() != 4) throw std::invalid_argument("conv2d: weight must be [Co,Ci,kh,kw], got " + shape_str(w.shape()));
  const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int co = w.dim(0), wci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (wci != ci) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(ci) +
                                " channels but weight expects " + std::to_string(wci));
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw std::invalid_argument("conv2d: kernel extents must be odd, got " + shape_str(w.shape()));
  }
  if (b.rank() != 1 || b.dim(0) != co) {
    throw std::invalid_argument("conv2d: bias must be [" + std::to_string(co) + "], got " +
                                shape_str(b.shape()));
  }
  if (spec.stride < 1 || spec.dilation < 1 || spec.pad < 0) {
    throw std::invalid_argument("conv2d: stride/dilation must be >= 1 and pad >= 0");
  }
  const int ho = conv_out_extent(h, kh, spec);
  const int wo = conv_out_extent(wd, kw, spec);
  if (ho < 1 || wo < 1) {
    throw std::invalid_argument("conv2d: output would be empty for input " + shape_str(x.shape()));
  }

  Tensor<T> out({co, ho, wo});
  const T* xp = x.data();
  const T* wp = w.data();
  T* op = out.data();
  const int s = spec.stride, d = spec.dilation, p = spec.pad;

  for (int c = 0; c < co; ++c) {
    T* plane = op + static_cast<std::size_t>(c) * ho * wo;
    const T bias = b[c];
    for (int i = 0; i < ho * wo; ++i) plane[i] = bias;
  }
  for (int c = 0; c < co; ++c) {
    T* oplane = op + static_cast<std::size_t>(c) * ho * wo;
    for (int ic = 0; ic < ci; ++ic) {
      const T* xplane = xp + static_cast<std::size_t>(ic) * h * wd;
      const T* wrow = wp + ((static_cast<std::size_t>(c) * ci + ic) * kh) * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s - p + ky * d;
          if (iy < 0 || iy >= h) continue;
          const T* xrow = xplane + static_cast<std::size_t>(iy) * wd;
          T* orow = oplane + static_cast<std::size_t>(oy) * wo;
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = wrow[ky * kw + kx];
            const int xoff = kx * d - p;
            const int lo = std::max(0, ceil_div(-xoff, s));
            const int hi = std::min(wo, floor_div(wd - 1 - xoff, s) + 1);
            const T* xq = xrow + xoff;
            if (s == 1) {
              for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * xq[ox];
            } else {
              for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * xq[ox * s];
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec,
                     const Tensor<T>& gout, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ho = gout.dim(1), wo = gout.dim(2);
  const int s = spec.stride, d = spec.dilation, p = spec.pad;

  if (gb != nullptr) {
    for (int c = 0; c < co; ++c) {
      const T* gplane = gout.data() + static_cast<std::size_t>(c) * ho * wo;
      T acc = 0;
      for (int i = 0; i < ho * wo; ++i) acc += gplane[i];
      (*gb)[c] += acc;
    }
  }
  if (gx == nullptr && gw == nullptr) return;

  for (int c = 0; c < co; ++c) {
    const T* gplane = gout.data() + static_cast<std::size_t>(c) * ho * wo;
    for (int ic = 0; ic < ci; ++ic) {
      const T* xplane = x.data() + static_cast<std::size_t>(ic) * h * wd;
      T* gxplane = gx ? gx->data() + static_cast<std::size_t>(ic) * h * wd : nullptr;
      const std::size_t wbase = (static_cast<std::size_t>(c) * ci + ic) * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s - p + ky * d;
          if (iy < 0 || iy >= h) continue;
          const T* xrow = xplane + static_cast<std::size_t>(iy) * wd;
          T* gxrow = gxplane ? gxplane + static_cast<std::size_t>(iy) * wd : nullptr;
          const T* grow = gplane + static_cast<std::size_t>(oy) * wo;
          for (int kx = 0; kx < kw; ++kx) {
            const int xoff = kx * d - p;
            const int lo = std::max(0, ceil_div(-xoff, s));
            const int hi = std::min(wo, floor_div(wd - 1 - xoff, s) + 1);
            if (hi <= lo) continue;
            if (gw != nullptr) {
              T acc = 0;
              for (int ox = lo; ox < hi; ++ox) acc += grow[ox] * xrow[ox * s + xoff];
              gw->data()[wbase + ky * kw + kx] += acc;
            }
            if (gxrow != nullptr) {
              const T wv = w.data()[wbase + ky * kw + kx];
              for (int ox = lo; ox < hi; ++ox) gxrow[ox * s + xoff] += wv * grow[ox];
            }
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> bilinear_resize_forward(const Tensor<T>& x, int out_h, int out_w) {
  if (x.rank() != 3) {
    throw std::invalid_argument("bilinear_resize: input must be [C,H,W], got " +
                                shape_str(x.shape()));
  }
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_resize: empty output");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> out({c, out_h, out_w});
  std::vector<int> y0(out_h), y1(out_h), x0(out_w), x1(out_w);
  std::vector<T> fy(out_h), fx(out_w);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double src = (oy + 0.5) * sy - 0.5;
    src = std::min(std::max(src, 0.0), static_cast<double>(h - 1));
    y0[oy] = static_cast<int>(std::floor(src));
    y1[oy] = std::min(y0[oy] + 1, h - 1);
    fy[oy] = static_cast<T>(src - y0[oy]);
  }
  for (int ox = 0; ox < out_w; ++ox) {
    double src = (ox + 0.5) * sx - 0.5;
    src = std::min(std::max(src, 0.0), static_cast<double>(w - 1));
    x0[ox] = static_cast<int>(std::floor(src));
    x1[ox] = std::min(x0[ox] + 1, w - 1);
    fx[ox] = static_cast<T>(src - x0[ox]);
  }
  for (int ic = 0; ic < c; ++ic) {
    const T* xplane = x.data() + static_cast<std::size_t>(ic) * h * w;
    T* oplane = out.data() + static_cast<std::size_t>(ic) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const T* r0 = xplane + static_cast<std::size_t>(y0[oy]) * w;
      const T* r1 = xplane + static_cast<std::size_t>(y1[oy]) * w;
      const T wy = fy[oy];
      T* orow = oplane + static_cast<std::size_t>(oy) * out_w;
      for (int ox = 0; ox < out_w; ++ox) {
        const T wx = fx[ox];
        const T top = r0[x0[ox]] * (T(1) - wx) + r0[x1[ox]] * wx;
        const T bot = r1[x0[ox]] * (T(1) - wx) + r1[x1[ox]] * wx;
        orow[ox] = top * (T(1) - wy) + bot * wy;
      }
    }
  }
  return out;
}

template <typename T>
void softmax_inplace(T* v, int n) {
  T m = v[0];
  for (int i = 1; i < n; ++i) m = std::max(m, v[i]);
  T sum = 0;
  for (int i = 0; i < n; ++i) {
    v[i] = std::exp(v[i] - m);
    sum += v[i];
  }
  for (int i = 0; i < n; ++i) v[i] /= sum;
}

template Tensor<float> conv2d_forward(const Tensor<float>&, const Tensor<float>&,
                                      const Tensor<float>&, const ConvSpec&);
template Tensor<double> conv2d_forward(const Tensor<double>&, const Tensor<double>&,
                                       const Tensor<double>&, const ConvSpec&);
template void conv2d_backward(const Tensor<float>&, const Tensor<float>&, const ConvSpec&,
                              const Tensor<float>&, Tensor<float>*, Tensor<float>*,
                              Tensor<float>*);
template void conv2d_backward(const Tensor<double>&, const Tensor<double>&, const ConvSpec&,
                              const Tensor<double>&, Tensor<double>*, Tensor<double>*,
                              Tensor<double>*);
template Tensor<float> bilinear_resize_forward(const Tensor<float>&, int, int);
template Tensor<double> bilinear_resize_forward(const Tensor<double>&, int, int);
template void softmax_inplace(float*, int);
template void softmax_inplace(double*, int);

}  // namespace kernels

template <typename T>
Var conv2d(Tape<T>& t, Var x, Var w, Var b, const ConvSpec& spec) {
  Tensor<T> out = kernels::conv2d_forward(t.value(x), t.value(w), t.value(b), spec);
  return t.emit("conv2d", std::move(out), [x, w, b, spec](Tape<T>& tp, const Tensor<T>& g) {
    kernels::conv2d_backward(tp.value(x), tp.value(w), spec, g, tp.grad_accum_if(x),
                             tp.grad_accum_if(w), tp.grad_accum_if(b));
  });
}

template <typename T>
Var bilinear_resize(Tape<T>& t, Var x, int out_h, int out_w) {
  Tensor<T> out = kernels::bilinear_resize_forward(t.value(x), out_h, out_w);
  return t.emit("bilinear_resize", std::move(out), [x, out_h, out_w](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>* gx = tp.grad_accum_if(x);
    if (gx == nullptr) return;
    const Tensor<T>& xin = tp.value(x);
    const int c = xin.dim(0), h = xin.dim(1), w = xin.dim(2);
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      double srcy = std::min(std::max((oy + 0.5) * sy - 0.5, 0.0), static_cast<double>(h - 1));
      const int y0 = static_cast<int>(std::floor(srcy));
      const int y1 = std::min(y0 + 1, h - 1);
      const T wy = static_cast<T>(srcy - y0);
      for (int ox = 0; ox < out_w; ++ox) {
        double srcx = std::min(std::max((ox + 0.5) * sx - 0.5, 0.0), static_cast<double>(w - 1));
        const int x0 = static_cast<int>(std::floor(srcx));
        const int x1 = std::min(x0 + 1, w - 1);
        const T wx = static_cast<T>(srcx - x0);
        for (int ic = 0; ic < c; ++ic) {
          const T gv = g.at(ic, oy, ox);
          gx->at(ic, y0, x0) += gv * (T(1) - wy) * (T(1) - wx);
          gx->at(ic, y0, x1) += gv * (T(1) - wy) * wx;
          gx->at(ic, y1, x0) += gv * wy * (T(1) - wx);
          gx->at(ic, y1, x1) += gv * wy * wx;
        }
      }
    }
  });
}

template <typename T>
Var relu(Tape<T>& t, Var x) {
  const Tensor<T>& xin = t.value(x);
  Tensor<T> out(xin.shape());
  for (std::int64_t i = 0; i < xin.numel(); ++i) out[i] = xin[i] > T(0) ? xin[i] : T(0);
  return t.emit("relu", std::move(out), [x](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>* gx = tp.grad_accum_if(x);
    if (gx == nullptr) return;
    const Tensor<T>& xin = tp.value(x);
    for (std::int64_t i = 0; i < xin.numel(); ++i) {
      if (xin[i] > T(0)) (*gx)[i] += g[i];
    }
  });
}

template <typename T>
Var exp(Tape<T>& t, Var x) {
  const Tensor<T>& xin = t.value(x);
  Tensor<T> out(xin.shape());
  for (std::int64_t i = 0; i < xin.numel(); ++i) out[i] = std::exp(xin[i]);
  return t.emit("exp", std::move(out), [x](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>* gx = tp.grad_accum_if(x);
    if (gx == nullptr) return;
    const Tensor<T>& xin = tp.value(x);
    for (std::int64_t i = 0; i < xin.numel(); ++i) (*gx)[i] += g[i] * std::exp(xin[i]);
  });
}

template <typename T>
Var log(Tape<T>& t, Var x) {
  const Tensor<T>& xin = t.value(x);
  Tensor<T> out(xin.shape());
  for (std::int64_t i = 0; i < xin.numel(); ++i) out[i] = std::log(xin[i]);
  return t.emit("log", std::move(out), [x](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>* gx = tp.grad_accum_if(x);
    if (gx == nullptr) return;
    const Tensor<T>& xin = tp.value(x);
    for (std::int64_t i = 0; i < xin.numel(); ++i) (*gx)[i] += g[i] / xin[i];
  });
}

namespace {
template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) {
    return T(1) / (T(1) + std::exp(-v));
  }
  const T e = std::exp(v);
  return e / (T(1) + e);
}
}  // namespace

template <typename T>
Var sigmoid(Tape<T>& t, Var x) {
  const Tensor<T>& xin = t.value(x);
  Tensor<T> out(xin.shape());
  for (std::int64_t i = 0; i < xin.numel(); ++i) out[i] = sigmoid_scalar(xin[i]);
  return t.emit("sigmoid", std::move(out), [x](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>* gx = tp.grad_accum_if(x);
    if (gx == nullptr) return;
    const Tensor<T>& xin = tp.value(x);
    for (std::int64_t i = 0; i < xin.numel(); ++i) {
      const T s = sigmoid_scalar(xin[i]);
      (*gx)[i] += g[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  check_same_shape("add", av, bv);
  Tensor<T> out(av.shape());
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] + bv[i];
  return t.emit("add", std::move(out), [a, b](Tape<T>& tp, const Tensor<T>& g) {
    for (Var v : {a, b}) {
      if (Tensor<T>* gv = tp.grad_accum_if(v)) {
        for (std::int64_t i = 0; i < g.numel(); ++i) (*gv)[i] += g[i];
      }
    }
  });
}

template <typename T>
Var sub(Tape<T>& t, Var a, Var b) {
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  check_same_shape("sub", av, bv);
  Tensor<T> out(av.shape());
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] - bv[i];
  return t.emit("sub", std::move(out), [a, b](Tape<T>& tp, const Tensor<T>& g) {
    if (Tensor<T>* ga = tp.grad_accum_if(a)) {
      for (std::int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor<T>* gb = tp.grad_accum_if(b)) {
      for (std::int64_t i = 0; i < g.numel(); ++i) (*gb)[i] -= g[i];
    }
  });
}

template <typename T>
Var mul(Tape<T>& t, Var a, Var b) {
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  check_same_shape("mul", av, bv);
  Tensor<T> out(av.shape());
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] * bv[i];
  return t.emit("mul", std::move(out), [a, b](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& av = tp.value(a);
    const Tensor<T>& bv = tp.value(b);
    if (Tensor<T>* ga = tp.grad_accum_if(a)) {
      for (std::int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor<T>* gb = tp.grad_accum_if(b)) {
      for (std::int64_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var add_n(Tape<T>& t, const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("add_n: empty input list");
  Tensor<T> out = t.value(xs[0]);
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const Tensor<T>& v = t.value(xs[i]);
    check_same_shape("add_n", out, v);
    for (std::int64_t j = 0; j < out.numel(); ++j) out[j] += v[j];
  }
  return t.emit("add_n", std::move(out), [xs](Tape<T>& tp, const Tensor<T>& g) {
    for (Var v : xs) {
      if (Tensor<T>* gv = tp.grad_accum_if(v)) {
        for (std::int64_t i = 0; i < g.numel(); ++i) (*gv)[i] += g[i];
      }
    }
  });
}

template <typename T>
Var scale(Tape<T>& t, Var x, double c) {
  const Tensor<T>& xin = t.value(x);
  Tensor<T> out(xin.shape());
  const T cc = static_cast<T>(c);
  for (std::int64_t i = 0; i < xin.numel(); ++i) out[i] = cc * xin[i];
  return t.emit("scale", std::move(out), [x, c](Tape<T>& tp, const Tensor<T>& g) {
    if (Tensor<T>* gx = tp.grad_accum_if(x)) {
      const T cc = static_cast<T>(c);
      for (std::int64_t i = 0; i < g.numel(); ++i) (*gx)[i] += cc * g[i];
    }
  });
}

template <typename T>
Var pixel_max(Tape<T>& t, Var a, Var b) {
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  check_same_shape("pixel_max", av, bv);
  Tensor<T> out(av.shape());
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] >= bv[i] ? av[i] : bv[i];
  return t.emit("pixel_max", std::move(out), [a, b](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& av = tp.value(a);
    const Tensor<T>& bv = tp.value(b);
    Tensor<T>* ga = tp.grad_accum_if(a);
    Tensor<T>* gb = tp.grad_accum_if(b);
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      if (av[i] >= bv[i]) {
        if (ga) (*ga)[i] += g[i];
      } else if (gb) {
        (*gb)[i] += g[i];
      }
    }
  });
}

template <typename T>
Var channel_softmax(Tape<T>& t, Var x) {
  const Tensor<T>& xin = t.value(x);
  if (xin.rank() != 1 && xin.rank() != 3) {
    throw std::invalid_argument("channel_softmax: expects rank 1 or 3, got " +
                                shape_str(xin.shape()));
  }
  const int c = xin.dim(0);
  const std::int64_t spatial = xin.numel() / c;
  Tensor<T> out = xin;
  std::vector<T> buf(c);
  for (std::int64_t p = 0; p < spatial; ++p) {
    for (int i = 0; i < c; ++i) buf[i] = out[i * spatial + p];
    kernels::softmax_inplace(buf.data(), c);
    for (int i = 0; i < c; ++i) out[i * spatial + p] = buf[i];
  }
  Tensor<T> saved = out;
  return t.emit("channel_softmax", std::move(out),
                [x, saved = std::move(saved)](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>* gx = tp.grad_accum_if(x);
    if (gx == nullptr) return;
    const int c = saved.dim(0);
    const std::int64_t spatial = saved.numel() / c;
    for (std::int64_t p = 0; p < spatial; ++p) {
      T dot = 0;
      for (int i = 0; i < c; ++i) dot += g[i * spatial + p] * saved[i * spatial + p];
      for (int i = 0; i < c; ++i) {
        (*gx)[i * spatial + p] += saved[i * spatial + p] * (g[i * spatial + p] - dot);
      }
    }
  });
}

template <typename T>
Var masked_avg_pool(Tape<T>& t, Var x, const Tensor<T>& mask) {
  const Tensor<T>& xin = t.value(x);
  if (xin.rank() != 3) {
    throw std::invalid_argument("masked_avg_pool: input must be [C,H,W], got " +
                                shape_str(xin.shape()));
  }
  if (mask.rank() != 2 || mask.dim(0) != xin.dim(1) || mask.dim(1) != xin.dim(2)) {
    throw std::invalid_argument("masked_avg_pool: mask " + shape_str(mask.shape()) +
                                " does not match input " + shape_str(xin.shape()));
  }
  const int c = xin.dim(0);
  const std::int64_t spatial = static_cast<std::int64_t>(xin.dim(1)) * xin.dim(2);
  T denom = 0;
  for (std::int64_t p = 0; p < spatial; ++p) denom += mask[p];
  if (!(denom > T(0))) throw std::invalid_argument("masked_avg_pool: mask weight sum must be > 0");
  Tensor<T> out({c});
  for (int i = 0; i < c; ++i) {
    T acc = 0;
    const T* plane = xin.data() + static_cast<std::size_t>(i) * spatial;
    for (std::int64_t p = 0; p < spatial; ++p) acc += plane[p] * mask[p];
    out[i] = acc / denom;
  }
  return t.emit("masked_avg_pool", std::move(out),
                [x, mask, denom](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>* gx = tp.grad_accum_if(x);
    if (gx == nullptr) return;
    const int c = g.dim(0);
    const std::int64_t spatial = mask.numel();
    for (int i = 0; i < c; ++i) {
      const T gi = g[i] / denom;
      T* plane = gx->data() + static_cast<std::size_t>(i) * spatial;
      for (std::int64_t p = 0; p < spatial; ++p) plane[p] += gi * mask[p];
    }
  });
}

template <typename T>
Var slice0(Tape<T>& t, Var x, int i0, int i1) {
  const Tensor<T>& xin = t.value(x);
  if (xin.rank() < 1) throw std::invalid_argument("slice0: needs rank >= 1");
  const int d0 = xin.dim(0);
  if (i0 < 0 || i1 <= i0 || i1 > d0) {
    throw std::invalid_argument("slice0: range [" + std::to_string(i0) + ", " +
                                std::to_string(i1) + ") out of bounds for axis size " +
                                std::to_string(d0));
  }
  const std::int64_t slab = xin.numel() / d0;
  std::vector<int> oshape = xin.shape();
  oshape[0] = i1 - i0;
  Tensor<T> out(oshape);
  std::copy(xin.data() + i0 * slab, xin.data() + i1 * slab, out.data());
  return t.emit("slice0", std::move(out), [x, i0, slab](Tape<T>& tp, const Tensor<T>& g) {
    if (Tensor<T>* gx = tp.grad_accum_if(x)) {
      T* dst = gx->data() + i0 * slab;
      for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
    }
  });
}

template <typename T>
Var sum_all(Tape<T>& t, Var x) {
  const Tensor<T>& xin = t.value(x);
  T acc = 0;
  for (std::int64_t i = 0; i < xin.numel(); ++i) acc += xin[i];
  return t.emit("sum_all", Tensor<T>::scalar(acc), [x](Tape<T>& tp, const Tensor<T>& g) {
    if (Tensor<T>* gx = tp.grad_accum_if(x)) {
      const T gv = g[0];
      for (std::int64_t i = 0; i < gx->numel(); ++i) (*gx)[i] += gv;
    }
  });
}

template <typename T>
Var softmax_ce(Tape<T>& t, Var logits, int label) {
  const Tensor<T>& v = t.value(logits);
  if (v.rank() != 1) {
    throw std::invalid_argument("softmax_ce: logits must be rank 1, got " + shape_str(v.shape()));
  }
  const int n = v.dim(0);
  if (label < 0 || label >= n) {
    throw std::invalid_argument("softmax_ce: label " + std::to_string(label) +
                                " out of range for " + std::to_string(n) + " classes");
  }
  T m = v[0];
  for (int i = 1; i < n; ++i) m = std::max(m, v[i]);
  T sum = 0;
  for (int i = 0; i < n; ++i) sum += std::exp(v[i] - m);
  const T loss = m + std::log(sum) - v[label];
  return t.emit("softmax_ce", Tensor<T>::scalar(loss),
                [logits, label](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>* gx = tp.grad_accum_if(logits);
    if (gx == nullptr) return;
    const Tensor<T>& v = tp.value(logits);
    const int n = v.dim(0);
    std::vector<T> p(v.data(), v.data() + n);
    kernels::softmax_inplace(p.data(), n);
    const T gv = g[0];
    for (int i = 0; i < n; ++i) {
      (*gx)[i] += gv * (p[i] - (i == label ? T(1) : T(0)));
    }
  });
}

template <typename T>
Var bce_logits_mean(Tape<T>& t, Var logits, const Tensor<T>& targets) {
  const Tensor<T>& v = t.value(logits);
  check_same_shape("bce_logits_mean", v, targets);
  const std::int64_t n = v.numel();
  T acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const T x = v[i];
    // max(x,0) - x*t + log(1 + exp(-|x|)), the stable form of the
    // cross entropy between sigmoid(x) and t
    acc += std::max(x, T(0)) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  return t.emit("bce_logits_mean", Tensor<T>::scalar(acc / static_cast<T>(n)),
                [logits, targets](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>* gx = tp.grad_accum_if(logits);
    if (gx == nullptr) return;
    const Tensor<T>& v = tp.value(logits);
    const std::int64_t n = v.numel();
    const T gv = g[0] / static_cast<T>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      (*gx)[i] += gv * (sigmoid_scalar(v[i]) - targets[i]);
    }
  });
}

template <typename T>
Var smooth_l1_sum(Tape<T>& t, Var pred, const Tensor<T>& target) {
  const Tensor<T>& v = t.value(pred);
  check_same_shape("smooth_l1_sum", v, target);
  T acc = 0;
  for (std::int64_t i = 0; i < v.numel(); ++i) {
    const T d = v[i] - target[i];
    const T a = std::abs(d);
    acc += a < T(1) ? T(0.5) * d * d : a - T(0.5);
  }
  return t.emit("smooth_l1_sum", Tensor<T>::scalar(acc),
                [pred, target](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>* gx = tp.grad_accum_if(pred);
    if (gx == nullptr) return;
    const Tensor<T>& v = tp.value(pred);
    const T gv = g[0];
    for (std::int64_t i = 0; i < v.numel(); ++i) {
      const T d = v[i] - target[i];
      (*gx)[i] += gv * std::max(T(-1), std::min(T(1), d));
    }
  });
}

template <typename T>
Var gather_scalars(Tape<T>& t, Var x, std::vector<std::int64_t> idx) {
  const Tensor<T>& v = t.value(x);
  if (idx.empty()) throw std::invalid_argument("gather_scalars: empty index list");
  Tensor<T> out({static_cast<int>(idx.size())});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= v.numel()) {
      throw std::invalid_argument("gather_scalars: index " + std::to_string(idx[i]) +
                                  " outside " + std::to_string(v.numel()) + " elements");
    }
    out[static_cast<std::int64_t>(i)] = v[idx[i]];
  }
  return t.emit("gather_scalars", std::move(out),
                [x, idx = std::move(idx)](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>* gx = tp.grad_accum_if(x);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (*gx)[idx[i]] += g[static_cast<std::int64_t>(i)];
    }
  });
}

#define FCIS_INSTANTIATE_OPS(T)                                              \
  template Var conv2d(Tape<T>&, Var, Var, Var, const ConvSpec&);             \
  template Var bilinear_resize(Tape<T>&, Var, int, int);                     \
  template Var relu(Tape<T>&, Var);                                          \
  template Var exp(Tape<T>&, Var);                                           \
  template Var log(Tape<T>&, Var);                                           \
  template Var sigmoid(Tape<T>&, Var);                                       \
  template Var add(Tape<T>&, Var, Var);                                      \
  template Var sub(Tape<T>&, Var, Var);                                      \
  template Var mul(Tape<T>&, Var, Var);                                      \
  template Var add_n(Tape<T>&, const std::vector<Var>&);                     \
  template Var scale(Tape<T>&, Var, double);                                 \
  template Var pixel_max(Tape<T>&, Var, Var);                                \
  template Var channel_softmax(Tape<T>&, Var);                               \
  template Var masked_avg_pool(Tape<T>&, Var, const Tensor<T>&);             \
  template Var slice0(Tape<T>&, Var, int, int);                              \
  template Var sum_all(Tape<T>&, Var);                                       \
  template Var softmax_ce(Tape<T>&, Var, int);                               \
  template Var bce_logits_mean(Tape<T>&, Var, const Tensor<T>&);             \
  template Var smooth_l1_sum(Tape<T>&, Var, const Tensor<T>&);             \
  template Var gather_scalars(Tape<T>&, Var, std::vector<std::int64_t>);

FCIS_INSTANTIATE_OPS(float)
FCIS_INSTANTIATE_OPS(double)

#undef FCIS_INSTANTIATE_OPS

}  // namespace fcis
