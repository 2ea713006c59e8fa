#include "dictnet/linalg.hpp"

#include <cmath>
#include <cstring>

namespace dictnet {

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw_shape_mismatch("matmul", a.shape_str(), b.shape_str());
  }
  a.require_finite("matmul lhs");
  b.require_finite("matmul rhs");
  DenseMatrix out(a.rows(), b.cols(), 0.0);
  // i-k-j order: the inner loop runs over contiguous rows of b and out while
  // keeping each out(i, j) accumulated in increasing k, matching the naive
  // triple loop bit for bit.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double av = arow[k];
      const double* brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) {
        orow[j] += av * brow[j];
      }
    }
  }
  return out;
}

DenseMatrix transpose(const DenseMatrix& m) {
  DenseMatrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  }
  return out;
}

double frobenius_norm(const DenseMatrix& m) {
  double acc = 0.0;
  for (double v : m.values()) acc += v * v;
  return std::sqrt(acc);
}

double column_norm(const DenseMatrix& m, std::size_t col) {
  double acc = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double v = m(r, col);
    acc += v * v;
  }
  return std::sqrt(acc);
}

QrAppendResult qr_append(const DenseMatrix* basis, const DenseMatrix& v, double dep_tol) {
  if (v.cols() != 1) {
    throw ShapeError("qr_append: v must be a column vector, got " + v.shape_str());
  }
  v.require_finite("qr_append v");
  const std::size_t m = v.rows();
  const std::size_t k = basis ? basis->cols() : 0;
  if (basis) {
    basis->require_finite("qr_append basis");
    if (basis->rows() != m) {
      throw_shape_mismatch("qr_append", basis->shape_str(), v.shape_str());
    }
  }

  double vnorm = 0.0;
  for (std::size_t r = 0; r < m; ++r) vnorm += v(r, 0) * v(r, 0);
  vnorm = std::sqrt(vnorm);

  QrAppendResult res;
  res.r_coeffs.assign(k, 0.0);
  DenseMatrix resid = v;
  // Modified Gram-Schmidt with one re-orthogonalization pass.
  for (int pass = 0; pass < 2 && k > 0; ++pass) {
    for (std::size_t j = 0; j < k; ++j) {
      double dot = 0.0;
      for (std::size_t r = 0; r < m; ++r) dot += (*basis)(r, j) * resid(r, 0);
      res.r_coeffs[j] += dot;
      for (std::size_t r = 0; r < m; ++r) resid(r, 0) -= dot * (*basis)(r, j);
    }
  }

  double rnorm = 0.0;
  for (std::size_t r = 0; r < m; ++r) rnorm += resid(r, 0) * resid(r, 0);
  rnorm = std::sqrt(rnorm);
  res.residual_norm = rnorm;

  if (rnorm < dep_tol * vnorm || rnorm == 0.0) {
    return res;  // rejected: v is dependent on the basis
  }
  for (std::size_t r = 0; r < m; ++r) resid(r, 0) /= rnorm;
  res.q = std::move(resid);
  return res;
}

DenseMatrix least_squares(const DenseMatrix& d, const DenseMatrix& w, double dep_tol) {
  if (d.rows() != w.rows()) {
    throw_shape_mismatch("least_squares", d.shape_str(), w.shape_str());
  }
  d.require_finite("least_squares d");
  w.require_finite("least_squares w");
  const std::size_t m = d.rows();
  const std::size_t l = d.cols();
  if (l > m) {
    throw RankError("least_squares: more columns (" + std::to_string(l) +
                        ") than rows (" + std::to_string(m) + "), column " +
                        std::to_string(m) + " cannot be independent",
                    m);
  }

  std::vector<double> colnorm(l);
  for (std::size_t c = 0; c < l; ++c) colnorm[c] = column_norm(d, c);

  // Householder QR of d, reflectors stored in-place below the diagonal.
  DenseMatrix a = d;
  DenseMatrix rhs = w;
  std::vector<double> beta(l, 0.0);

  for (std::size_t k = 0; k < l; ++k) {
    double sigma = 0.0;
    for (std::size_t r = k; r < m; ++r) sigma += a(r, k) * a(r, k);
    const double alpha = std::sqrt(sigma);
    if (alpha <= dep_tol * colnorm[k] || alpha == 0.0) {
      throw RankError("least_squares: rank-deficient matrix, column " +
                          std::to_string(k) + " is dependent on earlier columns",
                      k);
    }
    const double akk = a(k, k);
    const double vk = akk >= 0.0 ? akk + alpha : akk - alpha;
    // Reflector v = [1, a(k+1..m,k)/vk]; beta = vk^2 / (sigma + |akk|*alpha... )
    // Using the standard normalization: H = I - 2 v v^T / (v^T v).
    double vtv = 1.0;
    a(k, k) = vk;
    for (std::size_t r = k + 1; r < m; ++r) {
      a(r, k) /= vk;
      vtv += a(r, k) * a(r, k);
    }
    a(k, k) = 1.0;
    beta[k] = 2.0 / vtv;

    // Apply reflector to the remaining columns of a.
    for (std::size_t c = k + 1; c < l; ++c) {
      double dot = 0.0;
      for (std::size_t r = k; r < m; ++r) dot += a(r, k) * a(r, c);
      dot *= beta[k];
      for (std::size_t r = k; r < m; ++r) a(r, c) -= dot * a(r, k);
    }
    // Apply to all right-hand sides.
    for (std::size_t c = 0; c < rhs.cols(); ++c) {
      double dot = 0.0;
      for (std::size_t r = k; r < m; ++r) dot += a(r, k) * rhs(r, c);
      dot *= beta[k];
      for (std::size_t r = k; r < m; ++r) rhs(r, c) -= dot * a(r, k);
    }
    // Store R(k, k); entries above the diagonal already hold R.
    a(k, k) = akk >= 0.0 ? -alpha : alpha;
  }

  // Back-substitution on the leading l x l triangle.
  DenseMatrix c(l, w.cols(), 0.0);
  for (std::size_t col = 0; col < w.cols(); ++col) {
    for (std::size_t i = l; i-- > 0;) {
      double acc = rhs(i, col);
      for (std::size_t j = i + 1; j < l; ++j) acc -= a(i, j) * c(j, col);
      c(i, col) = acc / a(i, i);
    }
  }
  c.require_finite("least_squares result");
  return c;
}

}  // namespace dictnet
