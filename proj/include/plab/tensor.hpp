#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "plab/error.hpp"

namespace plab {

using Shape = std::vector<std::int64_t>;

namespace detail {
// Leaves grown elements uninitialized on resize().
template <class T>
struct DefaultInitAllocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  DefaultInitAllocator() = default;
  template <class U>
  DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}
  template <class U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};
}  // namespace detail

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array of doubles. No views or strides; a 2-D tensor
/// [rows, cols] is the working layout for batches and weight matrices.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    if (shape_.empty()) throw Error(ErrorCode::invalid_shape, "empty shape");
    std::int64_t n = 1;
    for (auto e : shape_) {
      if (e < 1) throw Error(ErrorCode::invalid_shape, "non-positive extent in " + shape_string(shape_));
      n *= e;
    }
    data_.assign(static_cast<std::size_t>(n), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : Tensor(shape, 0.0) {
    if (data.size() != data_.size()) {
      throw Error(ErrorCode::invalid_shape, "data length " + std::to_string(data.size()) +
                                                " does not match shape " + shape_string(shape_));
    }
    std::copy(data.begin(), data.end(), data_.begin());
  }

  static Tensor matrix(std::int64_t rows, std::int64_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }

  [[nodiscard]] std::size_t rows() const { return shape_.empty() ? 0 : static_cast<std::size_t>(shape_[0]); }
  [[nodiscard]] std::size_t cols() const {
    return shape_.size() < 2 ? 1 : static_cast<std::size_t>(shape_[1]);
  }

  [[nodiscard]] std::span<double> data() noexcept { return data_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] double* raw() noexcept { return data_.data(); }
  [[nodiscard]] const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  /// Reshape to [rows, cols] in place, keeping the allocation when it fits.
  /// Contents are unspecified afterwards.
  void resize_matrix(std::size_t rows, std::size_t cols) {
    if (rows < 1 || cols < 1) throw Error(ErrorCode::invalid_shape, "non-positive extent");
    shape_.assign({static_cast<std::int64_t>(rows), static_cast<std::int64_t>(cols)});
    data_.resize(rows * cols);
  }

  [[nodiscard]] bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double, detail::DefaultInitAllocator<double>> data_;
};

inline Tensor alloc(const Shape& shape, double fill) { return Tensor(shape, fill); }

namespace detail {
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMut = Eigen::Map<RowMajor>;
using MapConst = Eigen::Map<const RowMajor>;

inline MapConst as_matrix(const Tensor& t) {
  return {t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
inline MapMut as_matrix(Tensor& t) {
  return {t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw Error(ErrorCode::invalid_shape,
                "matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out = Tensor::matrix(static_cast<std::int64_t>(a.rows()), static_cast<std::int64_t>(b.cols()));
  detail::as_matrix(out).noalias() = detail::as_matrix(a) * detail::as_matrix(b);
  return out;
}

/// Sum over columns of a 2-D tensor; returns a [rows] tensor.
inline Tensor row_sum(const Tensor& t) {
  if (t.rank() != 2) throw Error(ErrorCode::invalid_shape, "row_sum expects rank 2");
  Tensor out({static_cast<std::int64_t>(t.rows())}, 0.0);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    out[r] = std::accumulate(row.begin(), row.end(), 0.0);
  }
  return out;
}

inline Tensor identity(std::int64_t n) {
  Tensor t = Tensor::matrix(n, n);
  for (std::int64_t i = 0; i < n; ++i) t.at(static_cast<std::size_t>(i), static_cast<std::size_t>(i)) = 1.0;
  return t;
}

}  // namespace plab
