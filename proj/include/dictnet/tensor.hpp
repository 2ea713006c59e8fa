#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "dictnet/errors.hpp"

namespace dictnet {

/// Dense row-major matrix of 64-bit floats.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  /// Pointer to the start of row r.
  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  DenseMatrix column(std::size_t c) const;
  void set_column(std::size_t c, const DenseMatrix& v);

  bool all_finite() const;
  /// Throws NumericError if any entry is NaN/Inf.
  void require_finite(const char* what) const;

  std::string shape_str() const;

  bool operator==(const DenseMatrix& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Dense row-major rank-4 tensor (n0, n1, n2, n3) of 64-bit floats.
/// Batches use the (N, C, H, W) convention; conv weights (M, K, KH, KW).
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(std::size_t n0, std::size_t n1, std::size_t n2, std::size_t n3, double fill = 0.0);
  Tensor4(std::array<std::size_t, 4> dims, std::vector<double> data);

  const std::array<std::size_t, 4>& dims() const { return dims_; }
  std::size_t dim(std::size_t i) const { return dims_[i]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    return data_[((a * dims_[1] + b) * dims_[2] + c) * dims_[3] + d];
  }
  double at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    return data_[((a * dims_[1] + b) * dims_[2] + c) * dims_[3] + d];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  /// Pointer to the (a, b) plane of size dims[2]*dims[3].
  double* plane(std::size_t a, std::size_t b) {
    return data_.data() + (a * dims_[1] + b) * dims_[2] * dims_[3];
  }
  const double* plane(std::size_t a, std::size_t b) const {
    return data_.data() + (a * dims_[1] + b) * dims_[2] * dims_[3];
  }

  bool all_finite() const;
  void require_finite(const char* what) const;

  std::string shape_str() const;

  bool operator==(const Tensor4& o) const = default;

 private:
  std::array<std::size_t, 4> dims_{0, 0, 0, 0};
  std::vector<double> data_;
};

/// Reinterprets a tensor as a (d0*d1*...) / cols matrix. Bit-exact, no copies
/// of individual values are rearranged; row-major layouts coincide.
DenseMatrix tensor_to_matrix(const Tensor4& t, std::size_t rows, std::size_t cols);

/// Inverse of tensor_to_matrix; round-trips bit-exactly.
Tensor4 matrix_to_tensor(const DenseMatrix& m, std::array<std::size_t, 4> dims);

[[noreturn]] void throw_shape_mismatch(const char* op, const std::string& a, const std::string& b);

}  // namespace dictnet
