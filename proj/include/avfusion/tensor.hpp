#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace avf {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major array. Every dimension is positive and the payload length
/// always equals the product of the shape.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (numel(shape_) != data_.size())
      throw ShapeError("tensor payload of " + std::to_string(data_.size()) +
                       " values does not match shape " + to_string(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  template <class... I>
  T& at(I... idx) {
    return data_[offset(idx...)];
  }
  template <class... I>
  const T& at(I... idx) const {
    return data_[offset(idx...)];
  }

  void reshape(Shape shape) {
    check_shape(shape);
    if (numel(shape) != data_.size())
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    shape_ = std::move(shape);
  }

  Tensor reshaped(Shape shape) const& {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }
  Tensor reshaped(Shape shape) && {
    reshape(std::move(shape));
    return std::move(*this);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    for (std::size_t d : shape)
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
  }

  template <class... I>
  std::size_t offset(I... idx) const {
    const std::size_t index[] = {static_cast<std::size_t>(idx)...};
    if (sizeof...(I) != shape_.size())
      throw ShapeError("index rank does not match tensor rank " + to_string(shape_));
    std::size_t flat = 0;
    for (std::size_t i = 0; i < sizeof...(I); ++i) flat = flat * shape_[i] + index[i];
    return flat;
  }

  Shape shape_;
  std::vector<T> data_;
};

template <class T>
void require_finite(const Tensor<T>& t, std::string_view what) {
  if (!t.all_finite())
    throw NonFiniteError("non-finite value produced by " + std::string(what));
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

/// Inner product over the flattened payloads.
template <class T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "dot");
  T acc{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace avf
