#include "dictnet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace dictnet {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (rows == 0 || cols == 0) {
    throw ArgumentError("DenseMatrix dimensions must be >= 1, got " + shape_str());
  }
}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows == 0 || cols == 0) {
    throw ArgumentError("DenseMatrix dimensions must be >= 1, got " + shape_str());
  }
  if (data_.size() != rows * cols) {
    throw ShapeError("DenseMatrix data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str());
  }
}

DenseMatrix DenseMatrix::column(std::size_t c) const {
  DenseMatrix out(rows_, 1);
  for (std::size_t r = 0; r < rows_; ++r) out(r, 0) = (*this)(r, c);
  return out;
}

void DenseMatrix::set_column(std::size_t c, const DenseMatrix& v) {
  if (v.rows() != rows_ || v.cols() != 1) {
    throw_shape_mismatch("set_column", shape_str(), v.shape_str());
  }
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v(r, 0);
}

bool DenseMatrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void DenseMatrix::require_finite(const char* what) const {
  if (!all_finite()) {
    throw NumericError(std::string(what) + ": non-finite entry in matrix " + shape_str());
  }
}

std::string DenseMatrix::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Tensor4::Tensor4(std::size_t n0, std::size_t n1, std::size_t n2, std::size_t n3, double fill)
    : dims_{n0, n1, n2, n3}, data_(n0 * n1 * n2 * n3, fill) {
  if (n0 == 0 || n1 == 0 || n2 == 0 || n3 == 0) {
    throw ArgumentError("Tensor4 dimensions must be >= 1, got " + shape_str());
  }
}

Tensor4::Tensor4(std::array<std::size_t, 4> dims, std::vector<double> data)
    : dims_(dims), data_(std::move(data)) {
  const std::size_t n = dims_[0] * dims_[1] * dims_[2] * dims_[3];
  if (data_.size() != n) {
    throw ShapeError("Tensor4 data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str());
  }
}

bool Tensor4::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor4::require_finite(const char* what) const {
  if (!all_finite()) {
    throw NumericError(std::string(what) + ": non-finite entry in tensor " + shape_str());
  }
}

std::string Tensor4::shape_str() const {
  std::ostringstream os;
  os << dims_[0] << "x" << dims_[1] << "x" << dims_[2] << "x" << dims_[3];
  return os.str();
}

DenseMatrix tensor_to_matrix(const Tensor4& t, std::size_t rows, std::size_t cols) {
  if (rows * cols != t.size()) {
    throw ShapeError("cannot view tensor " + t.shape_str() + " as matrix " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  return DenseMatrix(rows, cols, t.values());
}

Tensor4 matrix_to_tensor(const DenseMatrix& m, std::array<std::size_t, 4> dims) {
  const std::size_t n = dims[0] * dims[1] * dims[2] * dims[3];
  if (n != m.size()) {
    throw ShapeError("cannot view matrix " + m.shape_str() + " as tensor");
  }
  return Tensor4(dims, m.values());
}

void throw_shape_mismatch(const char* op, const std::string& a, const std::string& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a + " and " + b);
}

}  // namespace dictnet
