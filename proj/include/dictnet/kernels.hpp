#pragma once

#include <cstdint>
#include <vector>

#include "dictnet/rng.hpp"
#include "dictnet/tensor.hpp"

namespace dictnet {

// Direct convolution and the other layer primitives. All functions are pure
// with respect to their inputs; backward passes return gradients for every
// differentiable argument. Loops are sequential so results are reproducible.

struct ConvSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride,
                         std::size_t padding);

/// x: (N, C, H, W); w: (M, C, KH, KW); bias: length M (may be empty).
Tensor4 conv2d_forward(const Tensor4& x, const Tensor4& w,
                       const std::vector<double>& bias, ConvSpec spec);

struct Conv2dGrads {
  Tensor4 dx;
  Tensor4 dw;
  std::vector<double> dbias;
};

Conv2dGrads conv2d_backward(const Tensor4& x, const Tensor4& w, const Tensor4& dy,
                            ConvSpec spec);

struct MaxPoolResult {
  Tensor4 y;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// Non-overlapping window pooling (stride == window).
MaxPoolResult maxpool2d_forward(const Tensor4& x, std::size_t window);

Tensor4 maxpool2d_backward(const Tensor4& x, const MaxPoolResult& fwd, const Tensor4& dy,
                           std::size_t window);

struct BatchNormCache {
  std::vector<double> mean;     // per channel
  std::vector<double> inv_std;  // per channel, 1/sqrt(var + eps)
  Tensor4 x_hat;
};

/// Training-mode batch normalization over (N, H, W) per channel; biased
/// variance. Updates running statistics in place when update_running is set.
Tensor4 batchnorm_forward_train(const Tensor4& x, const std::vector<double>& gamma,
                                const std::vector<double>& beta, std::vector<double>& running_mean,
                                std::vector<double>& running_var, double momentum, double eps,
                                bool update_running, BatchNormCache& cache);

Tensor4 batchnorm_forward_eval(const Tensor4& x, const std::vector<double>& gamma,
                               const std::vector<double>& beta,
                               const std::vector<double>& running_mean,
                               const std::vector<double>& running_var, double eps);

struct BatchNormGrads {
  Tensor4 dx;
  std::vector<double> dgamma;
  std::vector<double> dbeta;
};

BatchNormGrads batchnorm_backward(const Tensor4& dy, const std::vector<double>& gamma,
                                  const BatchNormCache& cache);

/// Inverted dropout; the kept mask is scaled by 1/(1-p). Mask drawn from rng.
Tensor4 dropout_forward(const Tensor4& x, double p, Rng& rng, std::vector<std::uint8_t>& mask);

Tensor4 dropout_backward(const Tensor4& dy, double p, const std::vector<std::uint8_t>& mask);

Tensor4 relu_forward(const Tensor4& x);
Tensor4 relu_backward(const Tensor4& x, const Tensor4& dy);
Tensor4 leaky_relu_forward(const Tensor4& x, double alpha);
Tensor4 leaky_relu_backward(const Tensor4& x, const Tensor4& dy, double alpha);

/// Row-wise softmax (numerically stabilized by the row max).
DenseMatrix softmax(const DenseMatrix& logits);

/// d(loss)/d(logits) given d(loss)/d(softmax output).
DenseMatrix softmax_backward(const DenseMatrix& probs, const DenseMatrix& dprobs);

struct CrossEntropyResult {
  double loss = 0.0;           // mean over the batch
  DenseMatrix dlogits;         // gradient of the mean loss
  std::size_t correct = 0;     // top-1 hits, ties resolved to the lowest index
};

/// Softmax cross-entropy on logits (rows = samples). Labels are row indices.
CrossEntropyResult cross_entropy_with_logits(const DenseMatrix& logits,
                                             const std::vector<int>& labels);

}  // namespace dictnet
