#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string_view>
#include <vector>

#include "lmvp/errors.hpp"
#include "lmvp/strings.hpp"

namespace lmvp {

using Shape = std::vector<int>;

inline std::string shape_str(std::span<const int> s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) out += cat(i ? "," : "", s[i]);
  return out + ")";
}

// Dense row-major tensor. float carries training state; double exists for
// the finite-difference gradient checks.
template <class S>
class BasicTensor {
 public:
  BasicTensor() = default;

  explicit BasicTensor(Shape shape, S fill = S(0)) : shape_(std::move(shape)) {
    for (int d : shape_)
      if (d < 0) throw ContractError(cat("tensor dimension must be >= 0, got ", shape_str(shape_)));
    data_.assign(numel_of(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel_of(shape_))
      throw ContractError(cat("tensor data length ", data_.size(), " does not match shape ", shape_str(shape_)));
  }

  static size_t numel_of(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= size_t(d);
    return n;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return int(shape_.size()); }
  int dim(int i) const { return shape_[size_t(i)]; }
  size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::span<S> values() { return data_; }
  std::span<const S> values() const { return data_; }

  S& operator[](size_t i) { return data_[i]; }
  const S& operator[](size_t i) const { return data_[i]; }

  // Row-major multi-index access; rank checked, bounds unchecked (hot path).
  template <class... Ix>
  S& at(Ix... ix) {
    return data_[offset(ix...)];
  }
  template <class... Ix>
  const S& at(Ix... ix) const {
    return data_[offset(ix...)];
  }

  template <class... Ix>
  size_t offset(Ix... ix) const {
    constexpr int n = sizeof...(Ix);
    if (n != rank())
      throw ContractError(cat("index rank ", n, " does not match tensor rank ", rank()));
    size_t idx[n] = {size_t(ix)...};
    size_t off = 0;
    for (int i = 0; i < n; ++i) off = off * size_t(shape_[size_t(i)]) + idx[i];
    return off;
  }

  bool same_shape(const BasicTensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (S v : data_)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  template <class T>
  BasicTensor<T> cast() const {
    BasicTensor<T> out(shape_);
    for (size_t i = 0; i < data_.size(); ++i) out[i] = T(data_[i]);
    return out;
  }

 private:
  Shape shape_;
  std::vector<S> data_;
};

using Tensor = BasicTensor<float>;
using DTensor = BasicTensor<double>;

template <class S>
void check_same_shape(const BasicTensor<S>& a, const BasicTensor<S>& b, std::string_view op) {
  if (!a.same_shape(b))
    throw ContractError(cat(op, ": shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
}

template <class S>
void check_finite(const BasicTensor<S>& t, std::string_view op) {
  if (!t.all_finite()) throw ContractError(cat(op, ": tensor contains NaN/Inf"));
}

}  // namespace lmvp
