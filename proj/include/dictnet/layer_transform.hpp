#pragma once

#include <vector>

#include "dictnet/kernels.hpp"
#include "dictnet/subspace.hpp"
#include "dictnet/tensor.hpp"

namespace dictnet {

/// Flattens a conv weight (M, K, KH, KW) to M x (K*KH*KW); row i is filter i
/// in (k, kh, kw) row-major order, so W_mat = D * C expresses every output
/// filter as a D-weighted combination of the basis filters in C.
DenseMatrix matricize_conv(const Tensor4& w);

/// Reshapes an l x (K*KH*KW) coefficient matrix into l filters (bit-exact
/// round trip with matricize_conv).
Tensor4 filters_from_coefficients(const DenseMatrix& c, std::size_t k, std::size_t kh,
                                  std::size_t kw);

/// A fully-connected layer rewritten as tiny layer (C) plus transformation
/// layer (D): forward computes x -> C x -> D (C x) + bias.
struct DecomposedFc {
  Decomposition dec;
  std::vector<double> bias;  // length m; empty when the layer has no bias
};

/// A conv layer rewritten as tiny conv (filters = reshaped C, l channels)
/// plus a channel-mixing transformation layer (D, m x l).
struct DecomposedConv {
  Decomposition dec;
  Tensor4 coeff_filters;  // (l, k, kh, kw)
  std::vector<double> bias;
  ConvSpec spec;
};

DecomposedFc transform_fc(const DenseMatrix& weight, const std::vector<double>& bias, double beta,
                          const SelectionPolicy& policy = SelectionPolicy{});

DecomposedConv transform_conv(const Tensor4& weight, const std::vector<double>& bias, double beta,
                              const SelectionPolicy& policy = SelectionPolicy{},
                              ConvSpec spec = ConvSpec{});

// ---- decomposed forward/backward -----------------------------------------
// x rows are samples. The tiny activation t = x C^T is the cache the backward
// pass needs.

struct FcForward {
  DenseMatrix y;  // N x m
  DenseMatrix t;  // N x l
};

FcForward decomposed_fc_forward(const DenseMatrix& dict, const DenseMatrix& coeff,
                                const std::vector<double>& bias, const DenseMatrix& x);

struct FcGrads {
  DenseMatrix dx;
  DenseMatrix ddict;
  DenseMatrix dcoeff;
  std::vector<double> dbias;
};

FcGrads decomposed_fc_backward(const DenseMatrix& dict, const DenseMatrix& coeff,
                               const DenseMatrix& x, const DenseMatrix& t, const DenseMatrix& dy);

/// Transformation layer for conv: out channel i = sum_j dict(i, j) * in channel j
/// (+ bias), i.e. a 1x1 convolution with weight dict.
Tensor4 mix_channels_forward(const Tensor4& t, const DenseMatrix& dict,
                             const std::vector<double>& bias);

struct MixGrads {
  Tensor4 dt;
  DenseMatrix ddict;
  std::vector<double> dbias;
};

MixGrads mix_channels_backward(const Tensor4& t, const DenseMatrix& dict, const Tensor4& dy);

}  // namespace dictnet
