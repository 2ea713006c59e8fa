#include "dictnet/layer_transform.hpp"

namespace dictnet {

DenseMatrix matricize_conv(const Tensor4& w) {
  const auto [m, k, kh, kw] = w.dims();
  return tensor_to_matrix(w, m, k * kh * kw);
}

Tensor4 filters_from_coefficients(const DenseMatrix& c, std::size_t k, std::size_t kh,
                                  std::size_t kw) {
  return matrix_to_tensor(c, {c.rows(), k, kh, kw});
}

DecomposedFc transform_fc(const DenseMatrix& weight, const std::vector<double>& bias, double beta,
                          const SelectionPolicy& policy) {
  if (!bias.empty() && bias.size() != weight.rows()) {
    throw ShapeError("transform_fc: bias length " + std::to_string(bias.size()) +
                     " != output size " + std::to_string(weight.rows()));
  }
  return DecomposedFc{decompose(weight, beta, policy), bias};
}

DecomposedConv transform_conv(const Tensor4& weight, const std::vector<double>& bias, double beta,
                              const SelectionPolicy& policy, ConvSpec spec) {
  const auto [m, k, kh, kw] = weight.dims();
  if (!bias.empty() && bias.size() != m) {
    throw ShapeError("transform_conv: bias length " + std::to_string(bias.size()) +
                     " != filters " + std::to_string(m));
  }
  Decomposition dec = decompose(matricize_conv(weight), beta, policy);
  Tensor4 filters = filters_from_coefficients(dec.coefficients, k, kh, kw);
  return DecomposedConv{std::move(dec), std::move(filters), bias, spec};
}

FcForward decomposed_fc_forward(const DenseMatrix& dict, const DenseMatrix& coeff,
                                const std::vector<double>& bias, const DenseMatrix& x) {
  if (x.cols() != coeff.cols()) {
    throw_shape_mismatch("decomposed_fc_forward", x.shape_str(), coeff.shape_str());
  }
  FcForward out;
  out.t = matmul(x, transpose(coeff));   // N x l
  out.y = matmul(out.t, transpose(dict));  // N x m
  if (!bias.empty()) {
    for (std::size_t r = 0; r < out.y.rows(); ++r) {
      double* row = out.y.row(r);
      for (std::size_t c = 0; c < out.y.cols(); ++c) row[c] += bias[c];
    }
  }
  return out;
}

FcGrads decomposed_fc_backward(const DenseMatrix& dict, const DenseMatrix& coeff,
                               const DenseMatrix& x, const DenseMatrix& t, const DenseMatrix& dy) {
  FcGrads g;
  const DenseMatrix dt = matmul(dy, dict);        // N x l
  g.ddict = matmul(transpose(dy), t);             // m x l
  g.dcoeff = matmul(transpose(dt), x);            // l x n
  g.dx = matmul(dt, coeff);                       // N x n
  g.dbias.assign(dy.cols(), 0.0);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    const double* row = dy.row(r);
    for (std::size_t c = 0; c < dy.cols(); ++c) g.dbias[c] += row[c];
  }
  return g;
}

Tensor4 mix_channels_forward(const Tensor4& t, const DenseMatrix& dict,
                             const std::vector<double>& bias) {
  const auto [n, l, h, w] = t.dims();
  if (dict.cols() != l) {
    throw_shape_mismatch("mix_channels_forward", dict.shape_str(), t.shape_str());
  }
  const std::size_t m = dict.rows();
  const std::size_t hw = h * w;
  Tensor4 y(n, m, h, w, 0.0);
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t i = 0; i < m; ++i) {
      double* yp = y.plane(in, i);
      if (!bias.empty()) {
        for (std::size_t p = 0; p < hw; ++p) yp[p] = bias[i];
      }
      for (std::size_t j = 0; j < l; ++j) {
        const double dv = dict(i, j);
        const double* tp = t.plane(in, j);
        for (std::size_t p = 0; p < hw; ++p) yp[p] += dv * tp[p];
      }
    }
  }
  return y;
}

MixGrads mix_channels_backward(const Tensor4& t, const DenseMatrix& dict, const Tensor4& dy) {
  const auto [n, l, h, w] = t.dims();
  const std::size_t m = dict.rows();
  const std::size_t hw = h * w;
  MixGrads g{Tensor4(n, l, h, w, 0.0), DenseMatrix(m, l, 0.0), std::vector<double>(m, 0.0)};
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* dyp = dy.plane(in, i);
      for (std::size_t p = 0; p < hw; ++p) g.dbias[i] += dyp[p];
      for (std::size_t j = 0; j < l; ++j) {
        const double dv = dict(i, j);
        const double* tp = t.plane(in, j);
        double* dtp = g.dt.plane(in, j);
        double dacc = 0.0;
        for (std::size_t p = 0; p < hw; ++p) {
          dacc += dyp[p] * tp[p];
          dtp[p] += dv * dyp[p];
        }
        g.ddict(i, j) += dacc;
      }
    }
  }
  return g;
}

}  // namespace dictnet
