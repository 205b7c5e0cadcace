#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lmvp/tensor.hpp"

namespace lmvp {

enum class Pad { SameZero, Valid, SameReplicate };
enum class Act { Sigmoid, Tanh, Relu, LeakyRelu02 };

template <class S>
class Tape;

// Handle to one node of a tape. Cheap to copy; valid while its tape lives.
template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const BasicTensor<S>& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Reverse-mode tape. Nodes are appended during the forward pass and visited
// once in reverse order by backprop(). Single-owner: a tape must not be
// shared across threads.
template <class S>
class Tape {
 public:
  using T = BasicTensor<S>;
  using V = Var<S>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- graph entry points -------------------------------------------------
  V leaf(T value);                 // trainable input (eligible for wrt)
  V constant(T value);             // non-trainable input
  V detach(V x);                   // constant copy of x's current value

  // --- tensor ops ---------------------------------------------------------
  // input (Ci,H,W), kernel (Co,Ci,k,k) with k odd -> (Co,H',W')
  V conv2d(V input, V kernel, int stride, Pad pad);
  V chan_bias(V x, V bias);        // x (C,H,W) + bias (C), broadcast per plane
  V dense(V x, V weights, V bias); // weights (m,n), x (n), bias (m) -> (m)
  V activation(V x, Act kind);
  V softmax_sites(V x);            // (K,H,W), normalized across K per site
  V add(V a, V b);
  V sub(V a, V b);
  V mul(V a, V b);                 // elementwise
  V one_minus(V x);                // 1 - x
  V scale(V x, S c);
  V concat_ch(std::span<const V> xs);  // stack (Ci,H,W) blocks on channels
  V upsample2(V x);                // nearest-neighbour x2 on H and W
  V global_avg_pool(V x);          // (C,H,W) -> (C)
  // frame (C,H,W), filters (K*K,H,W); per-pixel local filtering with
  // replicate padding at the border.
  V dynamic_filter(V frame, V filters);
  V clamp(V x, S lo, S hi);
  V log(V x);

  // --- reductions / losses (scalar-valued, shape {1}) ----------------------
  V sum_all(V x);
  V sq_sum_diff(V a, V b);                  // sum((a-b)^2)
  V bce_mean(V pred, V target, S eps);      // mean binary cross-entropy, pred clamped to [eps,1-eps]
  V mse_mean(V pred, V target);
  V gdl(V pred, V target, S alpha);         // gradient difference loss, mean over adjacent pairs
  V affine(std::span<const V> xs, std::span<const S> coeffs);  // sum c_i * x_i over scalars

  // --- backward ------------------------------------------------------------
  // Gradient of the scalar `loss` with respect to each leaf in `wrt`.
  // Leaves outside `wrt` accumulate nothing; unreachable wrt leaves get a
  // zero tensor. One call per tape.
  std::vector<T> backprop(V loss, std::span<const V> wrt);

  const T& value_of(int32_t id) const { return nodes_[size_t(id)].value; }
  size_t size() const { return nodes_.size(); }

 private:
  enum class Op : uint8_t {
    Leaf, Const, Conv2d, ChanBias, Dense, Activation, SoftmaxSites,
    Add, Sub, Mul, OneMinus, Scale, ConcatCh, Upsample2, GlobalAvgPool,
    DynamicFilter, Clamp, Log, SumAll, SqSumDiff, BceMean, MseMean, Gdl,
    Affine,
  };

  struct Node {
    Op op;
    std::vector<int32_t> inputs;
    T value;
    T grad;                 // allocated on demand during backprop
    bool needs_grad = false;
    // op attributes
    int i0 = 0;             // stride
    Pad pad = Pad::SameZero;
    Act act = Act::Sigmoid;
    S s0{}, s1{};           // clamp lo/hi, scale factor, eps, alpha
    std::vector<S> coeffs;  // affine
  };

  V push(Node n);
  void backward_node(int32_t id);
  T& grad_buf(int32_t id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

template <class S>
inline const BasicTensor<S>& Var<S>::value() const {
  return tape->value_of(id);
}

// Convolutional GRU parameters: per gate, one conv applied to the input and
// one to the hidden state, plus a channel bias. All kernels (Ch,*,k,k).
template <class S>
struct GruVars {
  Var<S> wxz, whz, bz;  // update gate
  Var<S> wxr, whr, br;  // reset gate
  Var<S> wxc, whc, bc;  // candidate
};

// One convolutional GRU update:
//   z = sigmoid(conv(x,wxz) + conv(h,whz) + bz)
//   r = sigmoid(conv(x,wxr) + conv(h,whr) + br)
//   c = tanh(conv(x,wxc) + conv(r*h,whc) + bc)
//   h' = z*h + (1-z)*c
// A saturated update gate (z -> 1) keeps the previous hidden state.
template <class S>
Var<S> conv_gru_step(Tape<S>& t, Var<S> h, Var<S> x, const GruVars<S>& p) {
  auto z = t.activation(t.chan_bias(t.add(t.conv2d(x, p.wxz, 1, Pad::SameZero),
                                          t.conv2d(h, p.whz, 1, Pad::SameZero)),
                                    p.bz),
                        Act::Sigmoid);
  auto r = t.activation(t.chan_bias(t.add(t.conv2d(x, p.wxr, 1, Pad::SameZero),
                                          t.conv2d(h, p.whr, 1, Pad::SameZero)),
                                    p.br),
                        Act::Sigmoid);
  auto c = t.activation(t.chan_bias(t.add(t.conv2d(x, p.wxc, 1, Pad::SameZero),
                                          t.conv2d(t.mul(r, h), p.whc, 1, Pad::SameZero)),
                                    p.bc),
                        Act::Tanh);
  return t.add(t.mul(z, h), t.mul(t.one_minus(z), c));
}

// Output spatial size of conv2d for one axis.
inline int conv_out_dim(int in, int k, int stride, Pad pad) {
  if (pad == Pad::Valid) {
    if (in < k) throw ContractError(cat("conv2d: input dim ", in, " smaller than kernel ", k, " with valid padding"));
    return (in - k) / stride + 1;
  }
  return (in + stride - 1) / stride;
}

}  // namespace lmvp
