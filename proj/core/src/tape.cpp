#include "lmvp/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace lmvp {

namespace {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using CMap = Eigen::Map<const RowMat<S>>;
template <class S>
using MMap = Eigen::Map<RowMat<S>>;

struct ConvDims {
  int ci, h, w, co, k, ho, wo;
  int pad_y, pad_x;  // leading pad
  size_t rows;       // ci*k*k
  size_t cols;       // ho*wo
};

template <class S>
ConvDims conv_dims(const BasicTensor<S>& input, const BasicTensor<S>& kernel, int stride, Pad pad) {
  if (input.rank() != 3)
    throw ContractError(cat("conv2d: input must be rank 3 (C,H,W), got ", shape_str(input.shape())));
  if (kernel.rank() != 4)
    throw ContractError(cat("conv2d: kernel must be rank 4 (Co,Ci,k,k), got ", shape_str(kernel.shape())));
  if (kernel.dim(2) != kernel.dim(3))
    throw ContractError(cat("conv2d: kernel must be square, got ", shape_str(kernel.shape())));
  if (stride < 1) throw ContractError(cat("conv2d: stride must be >= 1, got ", stride));
  ConvDims d;
  d.ci = input.dim(0);
  d.h = input.dim(1);
  d.w = input.dim(2);
  d.co = kernel.dim(0);
  d.k = kernel.dim(2);
  if (kernel.dim(1) != d.ci)
    throw ContractError(cat("conv2d: input has ", d.ci, " channels but kernel expects ", kernel.dim(1),
                            " (input ", shape_str(input.shape()), ", kernel ", shape_str(kernel.shape()), ")"));
  if (pad != Pad::Valid && d.k % 2 == 0)
    throw ContractError(cat("conv2d: same padding requires an odd kernel, got k=", d.k));
  d.ho = conv_out_dim(d.h, d.k, stride, pad);
  d.wo = conv_out_dim(d.w, d.k, stride, pad);
  if (pad == Pad::Valid) {
    d.pad_y = d.pad_x = 0;
  } else {
    d.pad_y = std::max((d.ho - 1) * stride + d.k - d.h, 0) / 2;
    d.pad_x = std::max((d.wo - 1) * stride + d.k - d.w, 0) / 2;
  }
  d.rows = size_t(d.ci) * d.k * d.k;
  d.cols = size_t(d.ho) * d.wo;
  return d;
}

// Patch matrix, transposed layout: rows indexed by (ci,u,v), columns by
// output pixel. Row-contiguous so both the forward GEMM and the scatter in
// the backward pass stream linearly.
template <class S>
void im2col_t(const BasicTensor<S>& input, const ConvDims& d, int stride, Pad pad, std::vector<S>& colt) {
  colt.resize(d.rows * d.cols);
  const S* in = input.data();
  S* out = colt.data();
  const bool rep = pad == Pad::SameReplicate;
  for (int ci = 0; ci < d.ci; ++ci) {
    const S* plane = in + size_t(ci) * d.h * d.w;
    for (int u = 0; u < d.k; ++u) {
      for (int v = 0; v < d.k; ++v) {
        S* row = out;
        out += d.cols;
        for (int oy = 0; oy < d.ho; ++oy) {
          int iy = oy * stride + u - d.pad_y;
          bool y_in = iy >= 0 && iy < d.h;
          if (!y_in && !rep) {
            std::fill(row, row + d.wo, S(0));
            row += d.wo;
            continue;
          }
          int cy = std::clamp(iy, 0, d.h - 1);
          const S* src = plane + size_t(cy) * d.w;
          for (int ox = 0; ox < d.wo; ++ox) {
            int ix = ox * stride + v - d.pad_x;
            if (ix >= 0 && ix < d.w) {
              *row++ = src[ix];
            } else {
              *row++ = rep ? src[std::clamp(ix, 0, d.w - 1)] : S(0);
            }
          }
        }
      }
    }
  }
}

// Scatter-add of the transposed patch-matrix gradient back onto the input.
// Out-of-range taps vanish for zero padding and accumulate on the clamped
// border pixel for replicate padding.
template <class S>
void col2im_t(const std::vector<S>& dcolt, const ConvDims& d, int stride, Pad pad, BasicTensor<S>& dinput) {
  const S* in = dcolt.data();
  const bool rep = pad == Pad::SameReplicate;
  for (int ci = 0; ci < d.ci; ++ci) {
    S* plane = dinput.data() + size_t(ci) * d.h * d.w;
    for (int u = 0; u < d.k; ++u) {
      for (int v = 0; v < d.k; ++v) {
        const S* row = in;
        in += d.cols;
        for (int oy = 0; oy < d.ho; ++oy) {
          int iy = oy * stride + u - d.pad_y;
          bool y_in = iy >= 0 && iy < d.h;
          if (!y_in && !rep) {
            row += d.wo;
            continue;
          }
          int cy = std::clamp(iy, 0, d.h - 1);
          S* dst = plane + size_t(cy) * d.w;
          for (int ox = 0; ox < d.wo; ++ox) {
            int ix = ox * stride + v - d.pad_x;
            if (ix >= 0 && ix < d.w) {
              dst[ix] += row[ox];
            } else if (rep) {
              dst[std::clamp(ix, 0, d.w - 1)] += row[ox];
            }
          }
          row += d.wo;
        }
      }
    }
  }
}

template <class S>
std::vector<S>& conv_scratch() {
  thread_local std::vector<S> buf;
  return buf;
}

template <class S>
std::vector<S>& conv_scratch2() {
  thread_local std::vector<S> buf;
  return buf;
}

template <class S>
S sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  S e = std::exp(x);
  return e / (S(1) + e);
}

// d|z|^alpha / dz with the subgradient at 0 taken as 0.
template <class S>
S abs_pow_grad(S z, S alpha) {
  if (z == S(0)) return S(0);
  S s = z > S(0) ? S(1) : S(-1);
  if (alpha == S(1)) return s;
  return alpha * std::pow(std::abs(z), alpha - S(1)) * s;
}

int isqrt_exact(int q) {
  int k = int(std::lround(std::sqrt(double(q))));
  while (k * k > q) --k;
  while ((k + 1) * (k + 1) <= q) ++k;
  return k;
}

}  // namespace

// ---------------------------------------------------------------------------
// graph construction

template <class S>
Var<S> Tape<S>::push(Node n) {
  if (!n.value.all_finite())
    throw NumericalError(cat("op ", int(n.op), " produced a non-finite tensor"));
  nodes_.push_back(std::move(n));
  return V{this, int32_t(nodes_.size() - 1)};
}

template <class S>
Var<S> Tape<S>::leaf(T value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::constant(T value) {
  Node n;
  n.op = Op::Const;
  n.value = std::move(value);
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::detach(V x) {
  return constant(x.value());
}

template <class S>
Var<S> Tape<S>::conv2d(V input, V kernel, int stride, Pad pad) {
  const T& in = input.value();
  const T& kr = kernel.value();
  ConvDims d = conv_dims(in, kr, stride, pad);
  auto& colt = conv_scratch<S>();
  im2col_t(in, d, stride, pad, colt);
  T out(Shape{d.co, d.ho, d.wo});
  MMap<S>(out.data(), d.co, long(d.cols)).noalias() =
      CMap<S>(kr.data(), d.co, long(d.rows)) * CMap<S>(colt.data(), long(d.rows), long(d.cols));
  Node n;
  n.op = Op::Conv2d;
  n.inputs = {input.id, kernel.id};
  n.value = std::move(out);
  n.i0 = stride;
  n.pad = pad;
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::chan_bias(V x, V bias) {
  const T& xv = x.value();
  const T& bv = bias.value();
  if (xv.rank() != 3 || bv.rank() != 1 || bv.dim(0) != xv.dim(0))
    throw ContractError(cat("chan_bias: need x (C,H,W) and bias (C), got ", shape_str(xv.shape()), " and ",
                            shape_str(bv.shape())));
  T out = xv;
  size_t plane = size_t(xv.dim(1)) * xv.dim(2);
  for (int c = 0; c < xv.dim(0); ++c) {
    S b = bv[size_t(c)];
    S* p = out.data() + size_t(c) * plane;
    for (size_t i = 0; i < plane; ++i) p[i] += b;
  }
  Node n;
  n.op = Op::ChanBias;
  n.inputs = {x.id, bias.id};
  n.value = std::move(out);
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::dense(V x, V weights, V bias) {
  const T& xv = x.value();
  const T& wv = weights.value();
  const T& bv = bias.value();
  if (xv.rank() != 1 || wv.rank() != 2 || bv.rank() != 1 || wv.dim(1) != xv.dim(0) || wv.dim(0) != bv.dim(0))
    throw ContractError(cat("dense: incompatible shapes x ", shape_str(xv.shape()), ", weights ",
                            shape_str(wv.shape()), ", bias ", shape_str(bv.shape())));
  int m = wv.dim(0), k = wv.dim(1);
  T out(Shape{m});
  for (int i = 0; i < m; ++i) {
    S acc = bv[size_t(i)];
    const S* row = wv.data() + size_t(i) * k;
    for (int j = 0; j < k; ++j) acc += row[j] * xv[size_t(j)];
    out[size_t(i)] = acc;
  }
  Node n;
  n.op = Op::Dense;
  n.inputs = {x.id, weights.id, bias.id};
  n.value = std::move(out);
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::activation(V x, Act kind) {
  const T& xv = x.value();
  T out(xv.shape());
  const S* in = xv.data();
  S* o = out.data();
  size_t nn = xv.numel();
  switch (kind) {
    case Act::Sigmoid:
      for (size_t i = 0; i < nn; ++i) o[i] = sigmoid(in[i]);
      break;
    case Act::Tanh:
      for (size_t i = 0; i < nn; ++i) o[i] = std::tanh(in[i]);
      break;
    case Act::Relu:
      for (size_t i = 0; i < nn; ++i) o[i] = in[i] > S(0) ? in[i] : S(0);
      break;
    case Act::LeakyRelu02:
      for (size_t i = 0; i < nn; ++i) o[i] = in[i] > S(0) ? in[i] : S(0.2) * in[i];
      break;
  }
  Node n;
  n.op = Op::Activation;
  n.inputs = {x.id};
  n.value = std::move(out);
  n.act = kind;
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::softmax_sites(V x) {
  const T& xv = x.value();
  if (xv.rank() != 3 || xv.dim(0) < 1)
    throw ContractError(cat("softmax_sites: need (K,H,W) with K >= 1, got ", shape_str(xv.shape())));
  int kq = xv.dim(0);
  size_t plane = size_t(xv.dim(1)) * xv.dim(2);
  T out(xv.shape());
  const S* in = xv.data();
  S* o = out.data();
  for (size_t p = 0; p < plane; ++p) {
    S mx = in[p];
    for (int q = 1; q < kq; ++q) mx = std::max(mx, in[size_t(q) * plane + p]);
    S sum = S(0);
    for (int q = 0; q < kq; ++q) {
      S e = std::exp(in[size_t(q) * plane + p] - mx);
      o[size_t(q) * plane + p] = e;
      sum += e;
    }
    for (int q = 0; q < kq; ++q) o[size_t(q) * plane + p] /= sum;
  }
  Node n;
  n.op = Op::SoftmaxSites;
  n.inputs = {x.id};
  n.value = std::move(out);
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::add(V a, V b) {
  check_same_shape(a.value(), b.value(), "add");
  T out = a.value();
  const S* bv = b.value().data();
  S* o = out.data();
  for (size_t i = 0; i < out.numel(); ++i) o[i] += bv[i];
  Node n;
  n.op = Op::Add;
  n.inputs = {a.id, b.id};
  n.value = std::move(out);
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::sub(V a, V b) {
  check_same_shape(a.value(), b.value(), "sub");
  T out = a.value();
  const S* bv = b.value().data();
  S* o = out.data();
  for (size_t i = 0; i < out.numel(); ++i) o[i] -= bv[i];
  Node n;
  n.op = Op::Sub;
  n.inputs = {a.id, b.id};
  n.value = std::move(out);
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::mul(V a, V b) {
  check_same_shape(a.value(), b.value(), "mul");
  T out = a.value();
  const S* bv = b.value().data();
  S* o = out.data();
  for (size_t i = 0; i < out.numel(); ++i) o[i] *= bv[i];
  Node n;
  n.op = Op::Mul;
  n.inputs = {a.id, b.id};
  n.value = std::move(out);
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::one_minus(V x) {
  T out(x.value().shape());
  const S* in = x.value().data();
  S* o = out.data();
  for (size_t i = 0; i < out.numel(); ++i) o[i] = S(1) - in[i];
  Node n;
  n.op = Op::OneMinus;
  n.inputs = {x.id};
  n.value = std::move(out);
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::scale(V x, S c) {
  T out = x.value();
  S* o = out.data();
  for (size_t i = 0; i < out.numel(); ++i) o[i] *= c;
  Node n;
  n.op = Op::Scale;
  n.inputs = {x.id};
  n.value = std::move(out);
  n.s0 = c;
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::concat_ch(std::span<const V> xs) {
  if (xs.empty()) throw ContractError("concat_ch: no inputs");
  int h = xs[0].value().dim(1), w = xs[0].value().dim(2), ctot = 0;
  for (const V& x : xs) {
    const T& v = x.value();
    if (v.rank() != 3 || v.dim(1) != h || v.dim(2) != w)
      throw ContractError(cat("concat_ch: spatial dims differ, ", shape_str(v.shape()), " vs (*,", h, ",", w, ")"));
    ctot += v.dim(0);
  }
  T out(Shape{ctot, h, w});
  S* o = out.data();
  for (const V& x : xs) {
    const T& v = x.value();
    std::copy(v.data(), v.data() + v.numel(), o);
    o += v.numel();
  }
  Node n;
  n.op = Op::ConcatCh;
  n.inputs.reserve(xs.size());
  for (const V& x : xs) n.inputs.push_back(x.id);
  n.value = std::move(out);
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::upsample2(V x) {
  const T& xv = x.value();
  if (xv.rank() != 3) throw ContractError(cat("upsample2: need (C,H,W), got ", shape_str(xv.shape())));
  int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  T out(Shape{c, 2 * h, 2 * w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < 2 * h; ++y) {
      const S* src = xv.data() + (size_t(ci) * h + size_t(y / 2)) * w;
      S* dst = out.data() + (size_t(ci) * 2 * h + size_t(y)) * 2 * w;
      for (int xx = 0; xx < 2 * w; ++xx) dst[xx] = src[xx / 2];
    }
  Node n;
  n.op = Op::Upsample2;
  n.inputs = {x.id};
  n.value = std::move(out);
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::global_avg_pool(V x) {
  const T& xv = x.value();
  if (xv.rank() != 3) throw ContractError(cat("global_avg_pool: need (C,H,W), got ", shape_str(xv.shape())));
  int c = xv.dim(0);
  size_t plane = size_t(xv.dim(1)) * xv.dim(2);
  T out(Shape{c});
  for (int ci = 0; ci < c; ++ci) {
    S acc = S(0);
    const S* p = xv.data() + size_t(ci) * plane;
    for (size_t i = 0; i < plane; ++i) acc += p[i];
    out[size_t(ci)] = acc / S(plane);
  }
  Node n;
  n.op = Op::GlobalAvgPool;
  n.inputs = {x.id};
  n.value = std::move(out);
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::dynamic_filter(V frame, V filters) {
  const T& fr = frame.value();
  const T& fl = filters.value();
  if (fr.rank() != 3 || fl.rank() != 3)
    throw ContractError(cat("dynamic_filter: need frame (C,H,W) and filters (K*K,H,W), got ",
                            shape_str(fr.shape()), " and ", shape_str(fl.shape())));
  int h = fr.dim(1), w = fr.dim(2);
  if (fl.dim(1) != h || fl.dim(2) != w)
    throw ContractError(cat("dynamic_filter: spatial dims differ, frame ", shape_str(fr.shape()), ", filters ",
                            shape_str(fl.shape())));
  int q = fl.dim(0);
  int k = isqrt_exact(q);
  if (k * k != q || k % 2 == 0)
    throw ContractError(cat("dynamic_filter: filter channel count ", q, " is not an odd K squared"));
  int c = fr.dim(0), r = k / 2;
  T out(Shape{c, h, w});
  for (int ci = 0; ci < c; ++ci) {
    const S* plane = fr.data() + size_t(ci) * h * w;
    S* op = out.data() + size_t(ci) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        S acc = S(0);
        for (int u = 0; u < k; ++u) {
          int cy = std::clamp(y + u - r, 0, h - 1);
          for (int v = 0; v < k; ++v) {
            int cx = std::clamp(x + v - r, 0, w - 1);
            acc += fl[(size_t(u * k + v) * h + size_t(y)) * w + size_t(x)] * plane[size_t(cy) * w + size_t(cx)];
          }
        }
        op[size_t(y) * w + size_t(x)] = acc;
      }
  }
  Node n;
  n.op = Op::DynamicFilter;
  n.inputs = {frame.id, filters.id};
  n.value = std::move(out);
  n.i0 = k;
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::clamp(V x, S lo, S hi) {
  T out(x.value().shape());
  const S* in = x.value().data();
  S* o = out.data();
  for (size_t i = 0; i < out.numel(); ++i) o[i] = std::min(std::max(in[i], lo), hi);
  Node n;
  n.op = Op::Clamp;
  n.inputs = {x.id};
  n.value = std::move(out);
  n.s0 = lo;
  n.s1 = hi;
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::log(V x) {
  T out(x.value().shape());
  const S* in = x.value().data();
  S* o = out.data();
  for (size_t i = 0; i < out.numel(); ++i) o[i] = std::log(in[i]);
  Node n;
  n.op = Op::Log;
  n.inputs = {x.id};
  n.value = std::move(out);
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::sum_all(V x) {
  S acc = S(0);
  for (S v : x.value().values()) acc += v;
  Node n;
  n.op = Op::SumAll;
  n.inputs = {x.id};
  n.value = T(Shape{1}, std::vector<S>{acc});
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::sq_sum_diff(V a, V b) {
  check_same_shape(a.value(), b.value(), "sq_sum_diff");
  const S* av = a.value().data();
  const S* bv = b.value().data();
  S acc = S(0);
  for (size_t i = 0; i < a.value().numel(); ++i) {
    S d = av[i] - bv[i];
    acc += d * d;
  }
  Node n;
  n.op = Op::SqSumDiff;
  n.inputs = {a.id, b.id};
  n.value = T(Shape{1}, std::vector<S>{acc});
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::bce_mean(V pred, V target, S eps) {
  check_same_shape(pred.value(), target.value(), "bce_mean");
  if (!(eps > S(0) && eps < S(0.5))) throw ContractError(cat("bce_mean: eps must lie in (0, 0.5)"));
  const S* p = pred.value().data();
  const S* t = target.value().data();
  size_t nn = pred.value().numel();
  if (nn == 0) throw ContractError("bce_mean: empty tensors");
  S acc = S(0);
  for (size_t i = 0; i < nn; ++i) {
    S ph = std::min(std::max(p[i], eps), S(1) - eps);
    acc += -(t[i] * std::log(ph) + (S(1) - t[i]) * std::log(S(1) - ph));
  }
  Node n;
  n.op = Op::BceMean;
  n.inputs = {pred.id, target.id};
  n.value = T(Shape{1}, std::vector<S>{acc / S(nn)});
  n.s0 = eps;
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::mse_mean(V pred, V target) {
  check_same_shape(pred.value(), target.value(), "mse_mean");
  size_t nn = pred.value().numel();
  if (nn == 0) throw ContractError("mse_mean: empty tensors");
  const S* p = pred.value().data();
  const S* t = target.value().data();
  S acc = S(0);
  for (size_t i = 0; i < nn; ++i) {
    S d = p[i] - t[i];
    acc += d * d;
  }
  Node n;
  n.op = Op::MseMean;
  n.inputs = {pred.id, target.id};
  n.value = T(Shape{1}, std::vector<S>{acc / S(nn)});
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::gdl(V pred, V target, S alpha) {
  check_same_shape(pred.value(), target.value(), "gdl");
  const T& pv = pred.value();
  if (pv.rank() != 3) throw ContractError(cat("gdl: need (C,H,W), got ", shape_str(pv.shape())));
  if (alpha < S(1)) throw ContractError(cat("gdl: alpha must be >= 1"));
  int c = pv.dim(0), h = pv.dim(1), w = pv.dim(2);
  size_t pairs = size_t(c) * (size_t(h) * (w - 1) + size_t(h - 1) * w);
  if (pairs == 0) throw ContractError("gdl: image too small, no adjacent pairs");
  const S* p = pv.data();
  const S* t = target.value().data();
  S acc = S(0);
  auto term = [&](size_t a, size_t b) {
    S dt = std::abs(t[a] - t[b]);
    S dp = std::abs(p[a] - p[b]);
    S z = std::abs(dt - dp);
    acc += alpha == S(1) ? z : std::pow(z, alpha);
  };
  for (int ci = 0; ci < c; ++ci) {
    size_t base = size_t(ci) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x + 1 < w; ++x) term(base + size_t(y) * w + x, base + size_t(y) * w + x + 1);
    for (int y = 0; y + 1 < h; ++y)
      for (int x = 0; x < w; ++x) term(base + size_t(y) * w + x, base + size_t(y + 1) * w + x);
  }
  Node n;
  n.op = Op::Gdl;
  n.inputs = {pred.id, target.id};
  n.value = T(Shape{1}, std::vector<S>{acc / S(pairs)});
  n.s0 = alpha;
  return push(std::move(n));
}

template <class S>
Var<S> Tape<S>::affine(std::span<const V> xs, std::span<const S> coeffs) {
  if (xs.size() != coeffs.size() || xs.empty())
    throw ContractError(cat("affine: need matching non-empty inputs/coeffs, got ", xs.size(), "/", coeffs.size()));
  S acc = S(0);
  for (size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].value().numel() != 1)
      throw ContractError(cat("affine: input ", i, " is not a scalar, shape ", shape_str(xs[i].value().shape())));
    acc += coeffs[i] * xs[i].value()[0];
  }
  Node n;
  n.op = Op::Affine;
  n.inputs.reserve(xs.size());
  for (const V& x : xs) n.inputs.push_back(x.id);
  n.value = T(Shape{1}, std::vector<S>{acc});
  n.coeffs.assign(coeffs.begin(), coeffs.end());
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// backward

template <class S>
BasicTensor<S>& Tape<S>::grad_buf(int32_t id) {
  Node& n = nodes_[size_t(id)];
  if (n.grad.empty() && n.value.numel() > 0) n.grad = T(n.value.shape());
  return n.grad;
}

template <class S>
void Tape<S>::backward_node(int32_t id) {
  Node& n = nodes_[size_t(id)];
  const T& g = n.grad;
  auto in_val = [&](int i) -> const T& { return nodes_[size_t(n.inputs[size_t(i)])].value; };
  auto needs = [&](int i) { return nodes_[size_t(n.inputs[size_t(i)])].needs_grad; };
  auto in_grad = [&](int i) -> T& { return grad_buf(n.inputs[size_t(i)]); };

  switch (n.op) {
    case Op::Leaf:
    case Op::Const:
      break;
    case Op::Conv2d: {
      const T& input = in_val(0);
      const T& kernel = in_val(1);
      ConvDims d = conv_dims(input, kernel, n.i0, n.pad);
      auto& colt = conv_scratch<S>();
      im2col_t(input, d, n.i0, n.pad, colt);
      CMap<S> gm(g.data(), d.co, long(d.cols));
      if (needs(1)) {
        MMap<S>(in_grad(1).data(), d.co, long(d.rows)).noalias() +=
            gm * CMap<S>(colt.data(), long(d.rows), long(d.cols)).transpose();
      }
      if (needs(0)) {
        auto& dcolt = conv_scratch2<S>();
        dcolt.resize(d.rows * d.cols);
        MMap<S>(dcolt.data(), long(d.rows), long(d.cols)).noalias() =
            CMap<S>(kernel.data(), d.co, long(d.rows)).transpose() * gm;
        col2im_t(dcolt, d, n.i0, n.pad, in_grad(0));
      }
      break;
    }
    case Op::ChanBias: {
      const T& x = in_val(0);
      size_t plane = size_t(x.dim(1)) * x.dim(2);
      if (needs(0)) {
        T& dx = in_grad(0);
        for (size_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
      }
      if (needs(1)) {
        T& db = in_grad(1);
        for (int c = 0; c < x.dim(0); ++c) {
          S acc = S(0);
          const S* p = g.data() + size_t(c) * plane;
          for (size_t i = 0; i < plane; ++i) acc += p[i];
          db[size_t(c)] += acc;
        }
      }
      break;
    }
    case Op::Dense: {
      const T& x = in_val(0);
      const T& wt = in_val(1);
      int m = wt.dim(0), k = wt.dim(1);
      if (needs(0)) {
        T& dx = in_grad(0);
        for (int i = 0; i < m; ++i) {
          const S* row = wt.data() + size_t(i) * k;
          S gi = g[size_t(i)];
          for (int j = 0; j < k; ++j) dx[size_t(j)] += row[j] * gi;
        }
      }
      if (needs(1)) {
        T& dw = in_grad(1);
        for (int i = 0; i < m; ++i) {
          S gi = g[size_t(i)];
          S* row = dw.data() + size_t(i) * k;
          for (int j = 0; j < k; ++j) row[j] += gi * x[size_t(j)];
        }
      }
      if (needs(2)) {
        T& db = in_grad(2);
        for (int i = 0; i < m; ++i) db[size_t(i)] += g[size_t(i)];
      }
      break;
    }
    case Op::Activation: {
      if (!needs(0)) break;
      const T& x = in_val(0);
      const T& y = n.value;
      T& dx = in_grad(0);
      size_t nn = x.numel();
      switch (n.act) {
        case Act::Sigmoid:
          for (size_t i = 0; i < nn; ++i) dx[i] += g[i] * y[i] * (S(1) - y[i]);
          break;
        case Act::Tanh:
          for (size_t i = 0; i < nn; ++i) dx[i] += g[i] * (S(1) - y[i] * y[i]);
          break;
        case Act::Relu:
          for (size_t i = 0; i < nn; ++i) dx[i] += x[i] > S(0) ? g[i] : S(0);
          break;
        case Act::LeakyRelu02:
          for (size_t i = 0; i < nn; ++i) dx[i] += x[i] > S(0) ? g[i] : S(0.2) * g[i];
          break;
      }
      break;
    }
    case Op::SoftmaxSites: {
      if (!needs(0)) break;
      const T& y = n.value;
      T& dx = in_grad(0);
      int kq = y.dim(0);
      size_t plane = size_t(y.dim(1)) * y.dim(2);
      for (size_t p = 0; p < plane; ++p) {
        S dot = S(0);
        for (int q = 0; q < kq; ++q) dot += g[size_t(q) * plane + p] * y[size_t(q) * plane + p];
        for (int q = 0; q < kq; ++q) {
          size_t i = size_t(q) * plane + p;
          dx[i] += y[i] * (g[i] - dot);
        }
      }
      break;
    }
    case Op::Add:
      for (int i = 0; i < 2; ++i)
        if (needs(i)) {
          T& d = in_grad(i);
          for (size_t j = 0; j < g.numel(); ++j) d[j] += g[j];
        }
      break;
    case Op::Sub: {
      if (needs(0)) {
        T& d = in_grad(0);
        for (size_t j = 0; j < g.numel(); ++j) d[j] += g[j];
      }
      if (needs(1)) {
        T& d = in_grad(1);
        for (size_t j = 0; j < g.numel(); ++j) d[j] -= g[j];
      }
      break;
    }
    case Op::Mul: {
      if (needs(0)) {
        T& d = in_grad(0);
        const T& b = in_val(1);
        for (size_t j = 0; j < g.numel(); ++j) d[j] += g[j] * b[j];
      }
      if (needs(1)) {
        T& d = in_grad(1);
        const T& a = in_val(0);
        for (size_t j = 0; j < g.numel(); ++j) d[j] += g[j] * a[j];
      }
      break;
    }
    case Op::OneMinus:
      if (needs(0)) {
        T& d = in_grad(0);
        for (size_t j = 0; j < g.numel(); ++j) d[j] -= g[j];
      }
      break;
    case Op::Scale:
      if (needs(0)) {
        T& d = in_grad(0);
        for (size_t j = 0; j < g.numel(); ++j) d[j] += n.s0 * g[j];
      }
      break;
    case Op::ConcatCh: {
      size_t off = 0;
      for (size_t i = 0; i < n.inputs.size(); ++i) {
        size_t len = nodes_[size_t(n.inputs[i])].value.numel();
        if (nodes_[size_t(n.inputs[i])].needs_grad) {
          T& d = grad_buf(n.inputs[i]);
          for (size_t j = 0; j < len; ++j) d[j] += g[off + j];
        }
        off += len;
      }
      break;
    }
    case Op::Upsample2: {
      if (!needs(0)) break;
      const T& x = in_val(0);
      T& dx = in_grad(0);
      int c = x.dim(0), h = x.dim(1), w = x.dim(2);
      for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < 2 * h; ++y) {
          const S* gr = g.data() + (size_t(ci) * 2 * h + size_t(y)) * 2 * w;
          S* dr = dx.data() + (size_t(ci) * h + size_t(y / 2)) * w;
          for (int xx = 0; xx < 2 * w; ++xx) dr[xx / 2] += gr[xx];
        }
      break;
    }
    case Op::GlobalAvgPool: {
      if (!needs(0)) break;
      const T& x = in_val(0);
      T& dx = in_grad(0);
      size_t plane = size_t(x.dim(1)) * x.dim(2);
      for (int c = 0; c < x.dim(0); ++c) {
        S gi = g[size_t(c)] / S(plane);
        S* p = dx.data() + size_t(c) * plane;
        for (size_t i = 0; i < plane; ++i) p[i] += gi;
      }
      break;
    }
    case Op::DynamicFilter: {
      const T& fr = in_val(0);
      const T& fl = in_val(1);
      int c = fr.dim(0), h = fr.dim(1), w = fr.dim(2), k = n.i0, r = k / 2;
      bool nf = needs(0), nl = needs(1);
      if (!nf && !nl) break;
      T* dfr = nf ? &in_grad(0) : nullptr;
      T* dfl = nl ? &in_grad(1) : nullptr;
      for (int ci = 0; ci < c; ++ci) {
        const S* plane = fr.data() + size_t(ci) * h * w;
        const S* gp = g.data() + size_t(ci) * h * w;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            S gv = gp[size_t(y) * w + x];
            for (int u = 0; u < k; ++u) {
              int cy = std::clamp(y + u - r, 0, h - 1);
              for (int v = 0; v < k; ++v) {
                int cx = std::clamp(x + v - r, 0, w - 1);
                size_t fi = (size_t(u * k + v) * h + size_t(y)) * w + size_t(x);
                if (nf) (*dfr)[size_t(ci) * h * w + size_t(cy) * w + cx] += fl[fi] * gv;
                if (nl) (*dfl)[fi] += plane[size_t(cy) * w + cx] * gv;
              }
            }
          }
      }
      break;
    }
    case Op::Clamp: {
      if (!needs(0)) break;
      const T& x = in_val(0);
      T& dx = in_grad(0);
      for (size_t j = 0; j < g.numel(); ++j)
        if (x[j] >= n.s0 && x[j] <= n.s1) dx[j] += g[j];
      break;
    }
    case Op::Log: {
      if (!needs(0)) break;
      const T& x = in_val(0);
      T& dx = in_grad(0);
      for (size_t j = 0; j < g.numel(); ++j) dx[j] += g[j] / x[j];
      break;
    }
    case Op::SumAll: {
      if (!needs(0)) break;
      T& dx = in_grad(0);
      S gv = g[0];
      for (size_t j = 0; j < dx.numel(); ++j) dx[j] += gv;
      break;
    }
    case Op::SqSumDiff: {
      const T& a = in_val(0);
      const T& b = in_val(1);
      S gv = g[0];
      if (needs(0)) {
        T& d = in_grad(0);
        for (size_t j = 0; j < a.numel(); ++j) d[j] += S(2) * (a[j] - b[j]) * gv;
      }
      if (needs(1)) {
        T& d = in_grad(1);
        for (size_t j = 0; j < a.numel(); ++j) d[j] -= S(2) * (a[j] - b[j]) * gv;
      }
      break;
    }
    case Op::BceMean: {
      const T& p = in_val(0);
      const T& t = in_val(1);
      size_t nn = p.numel();
      S gv = g[0] / S(nn);
      S eps = n.s0;
      if (needs(0)) {
        T& d = in_grad(0);
        for (size_t j = 0; j < nn; ++j) {
          if (p[j] < eps || p[j] > S(1) - eps) continue;  // clamped region, zero slope
          d[j] += gv * (-(t[j] / p[j]) + (S(1) - t[j]) / (S(1) - p[j]));
        }
      }
      if (needs(1)) {
        T& d = in_grad(1);
        for (size_t j = 0; j < nn; ++j) {
          S ph = std::min(std::max(p[j], eps), S(1) - eps);
          d[j] += gv * (std::log(S(1) - ph) - std::log(ph));
        }
      }
      break;
    }
    case Op::MseMean: {
      const T& p = in_val(0);
      const T& t = in_val(1);
      size_t nn = p.numel();
      S gv = S(2) * g[0] / S(nn);
      if (needs(0)) {
        T& d = in_grad(0);
        for (size_t j = 0; j < nn; ++j) d[j] += gv * (p[j] - t[j]);
      }
      if (needs(1)) {
        T& d = in_grad(1);
        for (size_t j = 0; j < nn; ++j) d[j] -= gv * (p[j] - t[j]);
      }
      break;
    }
    case Op::Gdl: {
      const T& pv = in_val(0);
      const T& tv = in_val(1);
      int c = pv.dim(0), h = pv.dim(1), w = pv.dim(2);
      size_t pairs = size_t(c) * (size_t(h) * (w - 1) + size_t(h - 1) * w);
      S gv = g[0] / S(pairs);
      S alpha = n.s0;
      bool np = needs(0), nt = needs(1);
      T* dp = np ? &in_grad(0) : nullptr;
      T* dt = nt ? &in_grad(1) : nullptr;
      auto pair_grad = [&](size_t a, size_t b) {
        S dtv = tv[a] - tv[b];
        S dpv = pv[a] - pv[b];
        S z = std::abs(dtv) - std::abs(dpv);
        S outer = abs_pow_grad(z, alpha) * gv;
        if (np) {
          S sp = dpv > S(0) ? S(1) : (dpv < S(0) ? S(-1) : S(0));
          (*dp)[a] += -outer * sp;
          (*dp)[b] += outer * sp;
        }
        if (nt) {
          S st = dtv > S(0) ? S(1) : (dtv < S(0) ? S(-1) : S(0));
          (*dt)[a] += outer * st;
          (*dt)[b] += -outer * st;
        }
      };
      if (np || nt)
        for (int ci = 0; ci < c; ++ci) {
          size_t base = size_t(ci) * h * w;
          for (int y = 0; y < h; ++y)
            for (int x = 0; x + 1 < w; ++x) pair_grad(base + size_t(y) * w + x, base + size_t(y) * w + x + 1);
          for (int y = 0; y + 1 < h; ++y)
            for (int x = 0; x < w; ++x) pair_grad(base + size_t(y) * w + x, base + size_t(y + 1) * w + x);
        }
      break;
    }
    case Op::Affine: {
      for (size_t i = 0; i < n.inputs.size(); ++i)
        if (nodes_[size_t(n.inputs[i])].needs_grad) grad_buf(n.inputs[i])[0] += n.coeffs[i] * g[0];
      break;
    }
  }
}

template <class S>
std::vector<BasicTensor<S>> Tape<S>::backprop(V loss, std::span<const V> wrt) {
  if (backward_done_) throw ContractError("backprop: tape already consumed by a previous backprop");
  if (!loss.valid() || loss.tape != this) throw ContractError("backprop: loss is not a node of this tape");
  if (nodes_[size_t(loss.id)].value.numel() != 1)
    throw ContractError(cat("backprop: loss must be a scalar, got shape ",
                            shape_str(nodes_[size_t(loss.id)].value.shape())));
  for (auto& nd : nodes_) nd.needs_grad = false;
  for (const V& v : wrt) {
    if (!v.valid() || v.tape != this) throw ContractError("backprop: wrt entry is not a node of this tape");
    if (nodes_[size_t(v.id)].op != Op::Leaf)
      throw ContractError("backprop: wrt entries must be tape leaves");
    nodes_[size_t(v.id)].needs_grad = true;
  }
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].needs_grad) continue;
    for (int32_t in : nodes_[i].inputs)
      if (nodes_[size_t(in)].needs_grad) {
        nodes_[i].needs_grad = true;
        break;
      }
  }

  if (nodes_[size_t(loss.id)].needs_grad) {
    grad_buf(loss.id)[0] = S(1);
    for (int32_t id = loss.id; id >= 0; --id) {
      Node& nd = nodes_[size_t(id)];
      if (!nd.needs_grad || nd.grad.empty() || nd.inputs.empty()) continue;
      backward_node(id);
    }
  }

  std::vector<T> out;
  out.reserve(wrt.size());
  for (const V& v : wrt) {
    Node& nd = nodes_[size_t(v.id)];
    out.push_back(nd.grad.empty() ? T(nd.value.shape()) : nd.grad);
  }
  backward_done_ = true;
  return out;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace lmvp
