#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace m2at {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major N-d array. A rank-0 shape holds a single scalar.
// Plain value type: construction accepts any data; every published graph
// operation and attack enforces finiteness of the tensors it emits.
template <typename S>
struct TensorT {
  Shape shape;
  std::vector<S> data;

  TensorT() = default;
  explicit TensorT(Shape sh) : shape(std::move(sh)), data(shape_numel(shape), S(0)) {}
  TensorT(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                  " does not match data length " +
                                  std::to_string(data.size()));
  }

  static TensorT zeros(Shape sh) { return TensorT(std::move(sh)); }
  static TensorT full(Shape sh, S v) {
    TensorT t(std::move(sh));
    for (auto& e : t.data) e = v;
    return t;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  std::size_t extent(std::size_t i) const { return shape.at(i); }
  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  S& operator()(std::size_t i) { return data[i]; }
  S operator()(std::size_t i) const { return data[i]; }
  S& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  S operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  S& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  S operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename S>
bool all_finite(const TensorT<S>& t) {
  for (const S v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename To, typename From>
TensorT<To> tensor_cast(const TensorT<From>& t) {
  TensorT<To> out(t.shape);
  for (std::size_t i = 0; i < t.data.size(); ++i)
    out.data[i] = static_cast<To>(t.data[i]);
  return out;
}

namespace detail {
template <typename S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
}
}  // namespace detail

template <typename S>
TensorT<S> ew_add(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "ew_add");
  TensorT<S> out(a.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

template <typename S>
TensorT<S> ew_sub(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "ew_sub");
  TensorT<S> out(a.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] - b.data[i];
  return out;
}

template <typename S>
TensorT<S> hadamard(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "hadamard");
  TensorT<S> out(a.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

template <typename S>
TensorT<S> scaled(const TensorT<S>& a, S k) {
  TensorT<S> out(a.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] * k;
  return out;
}

template <typename S>
TensorT<S> clamped(const TensorT<S>& a, S lo, S hi) {
  TensorT<S> out(a.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    S v = a.data[i];
    out.data[i] = v < lo ? lo : (v > hi ? hi : v);
  }
  return out;
}

// sign(0) = 0, matching the single-step attack definition.
template <typename S>
TensorT<S> sign_tensor(const TensorT<S>& a) {
  TensorT<S> out(a.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a.data[i] > S(0) ? S(1) : (a.data[i] < S(0) ? S(-1) : S(0));
  return out;
}

template <typename S>
double linf_dist(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "linf_dist");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
    if (d > m) m = d;
  }
  return m;
}

// Kernels may split independent output elements across threads; every
// element is produced by exactly one invocation with a fixed inner
// summation order, so results do not depend on the thread count.
void set_num_threads(std::size_t n);  // 0 restores hardware default
std::size_t num_threads();
void parallel_for(std::size_t count, const std::function<void(std::size_t, std::size_t)>& chunk_fn);

}  // namespace m2at
