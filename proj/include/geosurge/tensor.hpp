#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "geosurge/error.hpp"

namespace geosurge::autodiff {

// Dense row-major matrix. Scalars are 1x1, row vectors 1xN, columns Nx1.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(size_t rows, size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, T{0}) {}

  static Tensor full(size_t rows, size_t cols, T v) {
    Tensor t(rows, cols);
    for (T& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(T v) { return full(1, 1, v); }

  static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    size_t r = rows.size();
    size_t c = r == 0 ? 0 : rows.begin()->size();
    Tensor t(r, c);
    size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw DataError("Tensor::from_rows: ragged rows");
      size_t j = 0;
      for (T v : row) t.at(i, j++) = v;
      ++i;
    }
    return t;
  }

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t size() const { return data_.size(); }

  T& at(size_t i, size_t j) { return data_[i * cols_ + j]; }
  const T& at(size_t i, size_t j) const { return data_[i * cols_ + j]; }
  T& operator[](size_t k) { return data_[k]; }
  const T& operator[](size_t k) const { return data_[k]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  void fill(T v) {
    for (T& x : data_) x = v;
  }

  std::string shape_str() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(rows_, cols_);
    for (size_t k = 0; k < data_.size(); ++k) out[k] = static_cast<U>(data_[k]);
    return out;
  }

  bool operator==(const Tensor& o) const = default;

 private:
  size_t rows_ = 0, cols_ = 0;
  std::vector<T> data_;
};

}  // namespace geosurge::autodiff
