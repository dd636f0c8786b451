#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "signflow/core/error.hpp"

namespace signflow {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  if (shape.size() == 1) out += ",";
  return out + ")";
}

// Dense row-major array. Value type: copies are deep.
template <typename T>
class NdArray {
 public:
  using value_type = T;

  NdArray() = default;

  explicit NdArray(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
    check_extents();
  }

  NdArray(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    check_extents();
    if (values_.size() != shape_size(shape_))
      throw ShapeError(detail::concat("NdArray: ", values_.size(),
                                      " values do not fill shape ",
                                      shape_string(shape_)));
  }

  static NdArray scalar(T v) { return NdArray(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::vector<T>& storage() { return values_; }
  const std::vector<T>& storage() const { return values_; }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  // 2D accessors; callers guarantee rank 2.
  T& operator()(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return values_[r * shape_[1] + c];
  }

  // Last-axis stride helper for rank >= 1.
  std::size_t rows() const { return shape_.empty() ? 0 : size() / shape_.back(); }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  NdArray reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw ShapeError(detail::concat("reshape: cannot view ", shape_string(shape_),
                                      " as ", shape_string(shape)));
    return NdArray(std::move(shape), values_);
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  NdArray<U> cast() const {
    return NdArray<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
  }

  friend bool operator==(const NdArray& a, const NdArray& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape_)
      if (e == 0)
        throw ShapeError("NdArray: zero extent in shape " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<T> values_;
};

}  // namespace signflow
