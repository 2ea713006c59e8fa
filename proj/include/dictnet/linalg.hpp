#pragma once

#include <optional>
#include <vector>

#include "dictnet/tensor.hpp"

namespace dictnet {

inline constexpr double kDepTolDefault = 1e-10;

/// Standard matrix product (a.rows x b.cols). Throws ShapeError on mismatch.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

DenseMatrix transpose(const DenseMatrix& m);

/// sqrt(sum of squared entries).
double frobenius_norm(const DenseMatrix& m);

double column_norm(const DenseMatrix& m, std::size_t col);

/// Result of orthonormal-basis extension. When the candidate is linearly
/// dependent on the basis (residual below dep_tol * |v|), `q` is absent and
/// only the coefficients are returned: v = basis * r_coeffs (+ residual_norm * q).
struct QrAppendResult {
  std::optional<DenseMatrix> q;  // unit column, orthogonal to the basis
  std::vector<double> r_coeffs;  // basis coefficients of v
  double residual_norm = 0.0;
  bool accepted() const { return q.has_value(); }
};

/// Extends an orthonormal column set with vector v (Gram-Schmidt with one
/// re-orthogonalization pass). basis may be empty (0 columns are expressed
/// as basis == nullptr).
QrAppendResult qr_append(const DenseMatrix* basis, const DenseMatrix& v,
                         double dep_tol = kDepTolDefault);

/// Least-squares solve: returns argmin_C |w - d*C|_F via Householder QR.
/// Requires d full column rank within dep_tol; otherwise throws RankError
/// naming the offending column.
DenseMatrix least_squares(const DenseMatrix& d, const DenseMatrix& w,
                          double dep_tol = kDepTolDefault);

}  // namespace dictnet
