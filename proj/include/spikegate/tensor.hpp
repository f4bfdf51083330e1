#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spikegate/error.hpp"

namespace spikegate {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major tensor of doubles.
///
/// No broadcasting: every binary operation requires identical shapes and
/// reshaping is always explicit.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* ptr() noexcept { return data_.data(); }
  const double* ptr() const noexcept { return data_.data(); }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  double max() const { return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end()); }
  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  void require_same_shape(const Tensor& other, const char* what) const {
    if (other.shape_ != shape_) {
      throw ShapeError(std::string(what) + ": shape " + shape_string(shape_) + " vs " +
                       shape_string(other.shape_));
    }
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  /// Contiguous sub-tensor along the leading axis, e.g. one sample of a batch.
  Tensor slice(std::size_t index) const {
    if (shape_.empty() || index >= shape_[0]) throw ShapeError("slice index out of range");
    Shape inner(shape_.begin() + 1, shape_.end());
    const std::size_t n = shape_size(inner);
    return Tensor(std::move(inner),
                  std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(index * n),
                                      data_.begin() + static_cast<std::ptrdiff_t>((index + 1) * n)));
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Stacks equally shaped tensors along a new leading axis.
inline Tensor stack(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw ShapeError("stack of zero tensors");
  Shape shape = parts.front()->shape();
  const std::size_t n = parts.front()->size();
  std::vector<double> data;
  data.reserve(n * parts.size());
  for (const Tensor* t : parts) {
    if (t->shape() != shape) {
      throw ShapeError("stack: shape " + shape_string(t->shape()) + " vs " + shape_string(shape));
    }
    data.insert(data.end(), t->data().begin(), t->data().end());
  }
  shape.insert(shape.begin(), parts.size());
  return Tensor(std::move(shape), std::move(data));
}

inline Tensor stack(const std::vector<Tensor>& parts) {
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(parts.size());
  for (const auto& p : parts) ptrs.push_back(&p);
  return stack(std::span<const Tensor* const>(ptrs));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace spikegate
