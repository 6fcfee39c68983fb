#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

#include "gaia/error.hpp"

namespace gaia {

/// Dense row-major matrix. Rows are points, columns are channels throughout
/// the library, so `row(i)` is the feature vector of point i.
template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  const T& operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const BasicMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  BasicMatrix& operator+=(const BasicMatrix& o) {
    require(same_shape(o), "shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  T acc{};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

/// out = a * b (+ bias broadcast over rows when non-empty).
template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b,
                      const BasicMatrix<T>* bias = nullptr) {
  require(a.cols() == b.rows(), "shape mismatch");
  BasicMatrix<T> out(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    T* o = out.data() + i * m;
    if (bias) std::copy_n(bias->data(), m, o);
    const T* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T{}) continue;
      const T* bp = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * bp[j];
    }
  }
  return out;
}

/// out = a * b^T
template <typename T>
BasicMatrix<T> matmul_bt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  require(a.cols() == b.cols(), "shape mismatch");
  BasicMatrix<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      out(i, j) = dot<T>(a.row(i), b.row(j));
  return out;
}

/// acc += a^T * b
template <typename T>
void add_matmul_at(BasicMatrix<T>& acc, const BasicMatrix<T>& a,
                   const BasicMatrix<T>& b) {
  require(a.rows() == b.rows() && acc.rows() == a.cols() &&
              acc.cols() == b.cols(),
          "shape mismatch");
  const std::size_t m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* bi = b.data() + i * m;
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const T av = a(i, p);
      if (av == T{}) continue;
      T* o = acc.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * bi[j];
    }
  }
}

/// acc(0, j) += sum_i a(i, j)
template <typename T>
void add_colsum(BasicMatrix<T>& acc, const BasicMatrix<T>& a) {
  require(acc.rows() == 1 && acc.cols() == a.cols(), "shape mismatch");
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) acc(0, j) += a(i, j);
}

}  // namespace gaia
