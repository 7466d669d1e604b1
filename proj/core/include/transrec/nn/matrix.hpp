#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace transrec::nn {

/// Dense row-major matrix of doubles. Every tensor in the model is stored as
/// one of these; higher-rank data (images, batched sequences) is flattened
/// into rows by the caller.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  void fill(double v);
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Accumulating GEMM kernels. Shapes are checked by the callers (ops.cpp).

/// c += a * b          a: n x k, b: k x m, c: n x m
void gemm_acc(const Matrix& a, const Matrix& b, Matrix& c);
/// c += a^T * b        a: k x n, b: k x m, c: n x m
void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& c);
/// c += a * b^T        a: n x k, b: m x k, c: n x m
void gemm_nt_acc(const Matrix& a, const Matrix& b, Matrix& c);

void axpy(double alpha, const Matrix& x, Matrix& y);

}  // namespace transrec::nn
