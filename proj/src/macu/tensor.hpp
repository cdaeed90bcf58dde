#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "macu/common.hpp"

namespace macu {

// Dense NCHW shape. All feature maps in the library are rank-4; vectors such
// as biases are carried as [1,C,1,1].
struct Shape {
  int64_t n = 0, c = 0, h = 0, w = 0;

  int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const { return cat_shape4(n, c, h, w); }
};

// Plain dense tensor value: shape plus row-major [N,C,H,W] storage. Gradient
// bookkeeping lives in the autograd layer, not here.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), v(static_cast<size_t>(s.numel()), T(0)) {}
  Tensor(Shape s, std::vector<T> data) : shape(s), v(std::move(data)) {
    if (static_cast<int64_t>(v.size()) != s.numel())
      throw ShapeError("tensor data length " + std::to_string(v.size()) +
                       " does not match shape " + s.str());
  }

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor full(Shape s, T value) {
    Tensor t(s);
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }

  int64_t numel() const { return shape.numel(); }
  bool empty() const { return v.empty(); }

  size_t idx(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return static_cast<size_t>(((n * shape.c + c) * shape.h + h) * shape.w + w);
  }
  T& at(int64_t n, int64_t c, int64_t h, int64_t w) { return v[idx(n, c, h, w)]; }
  T at(int64_t n, int64_t c, int64_t h, int64_t w) const { return v[idx(n, c, h, w)]; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  void fill(T value) { std::fill(v.begin(), v.end(), value); }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

// Integer class-index raster, [N,H,W]. Used for ground-truth masks and
// predictions; never differentiated.
struct ClassMask {
  int64_t n = 0, h = 0, w = 0;
  std::vector<int32_t> v;

  ClassMask() = default;
  ClassMask(int64_t n_, int64_t h_, int64_t w_)
      : n(n_), h(h_), w(w_), v(static_cast<size_t>(n_ * h_ * w_), 0) {}

  int64_t numel() const { return n * h * w; }
  int32_t& at(int64_t ni, int64_t hi, int64_t wi) {
    return v[static_cast<size_t>((ni * h + hi) * w + wi)];
  }
  int32_t at(int64_t ni, int64_t hi, int64_t wi) const {
    return v[static_cast<size_t>((ni * h + hi) * w + wi)];
  }
};

}  // namespace macu
