#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "lcanet/errors.hpp"

namespace lcanet {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_to_string(std::span<const std::size_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense rank-N array, row-major with the last axis contiguous.
/// Image convention is H x W x C. A default-constructed tensor is empty
/// and only valid as an "absent" placeholder.
template <typename S>
class Tensor {
  static_assert(std::is_floating_point_v<S>, "Tensor scalar must be a floating-point type");

 public:
  Tensor() = default;

  /// Zero-filled tensor. Shape must be non-empty with every dimension >= 1.
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(numel(shape_), S(0));
  }

  Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_to_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  bool empty() const { return shape_.empty(); }
  std::size_t rank() const { return shape_.size(); }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                       std::to_string(shape_.size()));
    }
    return shape_[axis];
  }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::span<S> values() { return {data_.data(), data_.size()}; }
  std::span<const S> values() const { return {data_.data(), data_.size()}; }

  /// Checked flat access; throws on out-of-range, never wraps around.
  S& operator[](std::size_t flat) {
    check_flat(flat);
    return data_[flat];
  }
  const S& operator[](std::size_t flat) const {
    check_flat(flat);
    return data_[flat];
  }

  /// Checked multi-index access, e.g. t(i, j, c).
  template <typename... Ix>
  S& operator()(Ix... ix) {
    return data_[offset_of({static_cast<std::size_t>(ix)...})];
  }
  template <typename... Ix>
  const S& operator()(Ix... ix) const {
    return data_[offset_of({static_cast<std::size_t>(ix)...})];
  }

  /// Row-major strides (last axis has stride 1).
  Shape strides() const {
    Shape s(shape_.size());
    std::size_t acc = 1;
    for (std::size_t k = shape_.size(); k-- > 0;) {
      s[k] = acc;
      acc *= shape_[k];
    }
    return s;
  }

  /// Flat offset of a multi-index; throws on rank mismatch or out-of-range.
  std::size_t offset_of(std::span<const std::size_t> idx) const {
    if (idx.size() != shape_.size()) {
      throw ShapeError("index rank " + std::to_string(idx.size()) + " does not match tensor rank " +
                       std::to_string(shape_.size()));
    }
    std::size_t off = 0;
    std::size_t stride = 1;
    for (std::size_t k = shape_.size(); k-- > 0;) {
      if (idx[k] >= shape_[k]) {
        throw std::out_of_range("index " + std::to_string(idx[k]) + " out of range for axis " +
                                std::to_string(k) + " of extent " + std::to_string(shape_[k]));
      }
      off += idx[k] * stride;
      stride *= shape_[k];
    }
    return off;
  }
  std::size_t offset_of(std::initializer_list<std::size_t> idx) const {
    return offset_of(std::span<const std::size_t>(idx.begin(), idx.size()));
  }

  /// Inverse of offset_of for valid flat offsets.
  Shape unflatten(std::size_t flat) const {
    check_flat(flat);
    Shape idx(shape_.size());
    for (std::size_t k = shape_.size(); k-- > 0;) {
      idx[k] = flat % shape_[k];
      flat /= shape_[k];
    }
    return idx;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must be non-empty");
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be >= 1, got " + shape_to_string(shape));
    }
  }

  void check_flat(std::size_t flat) const {
    if (flat >= data_.size()) {
      throw std::out_of_range("flat index " + std::to_string(flat) + " out of range for size " +
                              std::to_string(data_.size()));
    }
  }

  Shape shape_;
  std::vector<S> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

/// Throws NumericError if any entry is NaN or infinite.
template <typename S>
void require_finite(const Tensor<S>& t, const char* what) {
  for (S v : t.values()) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value");
  }
}

enum class BinaryOp { add, sub, mul };

/// Elementwise combination of two same-shape tensors.
template <typename S>
Tensor<S> map_binary(const Tensor<S>& a, const Tensor<S>& b, BinaryOp op) {
  require_same_shape(a, b, "map_binary");
  Tensor<S> out(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  const std::size_t n = a.size();
  switch (op) {
    case BinaryOp::add:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      break;
    case BinaryOp::sub:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
      break;
    case BinaryOp::mul:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
      break;
  }
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return map_binary(a, b, BinaryOp::add);
}
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return map_binary(a, b, BinaryOp::sub);
}
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return map_binary(a, b, BinaryOp::mul);
}

/// Sum of all entries in flat index order. The order is fixed so runs are
/// bit-reproducible; do not replace with a reordering reduction.
template <typename S>
S reduce_sum(const Tensor<S>& a) {
  S acc = 0;
  for (S v : a.values()) acc += v;
  return acc;
}

template <typename S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
  Tensor<S> out(a.shape());
  const S* pa = a.data();
  S* po = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = std::min(hi, std::max(lo, pa[i]));
  return out;
}

}  // namespace lcanet
