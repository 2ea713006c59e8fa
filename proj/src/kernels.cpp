#include "dictnet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dictnet {

std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride,
                         std::size_t padding) {
  const std::size_t padded = in + 2 * padding;
  if (padded < kernel) {
    throw ShapeError("conv: kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(padded));
  }
  return (padded - kernel) / stride + 1;
}

Tensor4 conv2d_forward(const Tensor4& x, const Tensor4& w, const std::vector<double>& bias,
                       ConvSpec spec) {
  const auto [n, c, h, wd] = x.dims();
  const auto [m, wc, kh, kw] = w.dims();
  if (c != wc) throw_shape_mismatch("conv2d", x.shape_str(), w.shape_str());
  if (!bias.empty() && bias.size() != m) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) + " != filters " +
                     std::to_string(m));
  }
  const std::size_t oh = conv_out_dim(h, kh, spec.stride, spec.padding);
  const std::size_t ow = conv_out_dim(wd, kw, spec.stride, spec.padding);
  Tensor4 y(n, m, oh, ow, 0.0);

  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(spec.padding);
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t o = 0; o < m; ++o) {
      double* yplane = y.plane(in, o);
      if (!bias.empty()) {
        std::fill(yplane, yplane + oh * ow, bias[o]);
      }
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xplane = x.plane(in, ch);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double wv = w.at(o, ch, ky, kx);
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * spec.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              double* yrow = yplane + oy * ow;
              const double* xrow = xplane + static_cast<std::size_t>(iy) * wd;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * spec.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                yrow[ox] += wv * xrow[static_cast<std::size_t>(ix)];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

Conv2dGrads conv2d_backward(const Tensor4& x, const Tensor4& w, const Tensor4& dy,
                            ConvSpec spec) {
  const auto [n, c, h, wd] = x.dims();
  const auto [m, wc, kh, kw] = w.dims();
  const auto [dn, dm, oh, ow] = dy.dims();
  if (c != wc || dn != n || dm != m) {
    throw_shape_mismatch("conv2d_backward", x.shape_str(), dy.shape_str());
  }

  Conv2dGrads g{Tensor4(n, c, h, wd, 0.0), Tensor4(m, c, kh, kw, 0.0),
                std::vector<double>(m, 0.0)};
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(spec.padding);

  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t o = 0; o < m; ++o) {
      const double* dyplane = dy.plane(in, o);
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          g.dbias[o] += dyplane[oy * ow + ox];
        }
      }
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xplane = x.plane(in, ch);
        double* dxplane = g.dx.plane(in, ch);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double wv = w.at(o, ch, ky, kx);
            double dwacc = 0.0;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * spec.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              const double* dyrow = dyplane + oy * ow;
              const double* xrow = xplane + static_cast<std::size_t>(iy) * wd;
              double* dxrow = dxplane + static_cast<std::size_t>(iy) * wd;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * spec.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                const double dv = dyrow[ox];
                dwacc += dv * xrow[static_cast<std::size_t>(ix)];
                dxrow[static_cast<std::size_t>(ix)] += dv * wv;
              }
            }
            g.dw.at(o, ch, ky, kx) += dwacc;
          }
        }
      }
    }
  }
  return g;
}

MaxPoolResult maxpool2d_forward(const Tensor4& x, std::size_t window) {
  const auto [n, c, h, w] = x.dims();
  if (window == 0 || h < window || w < window) {
    throw ShapeError("maxpool: window " + std::to_string(window) + " too large for input " +
                     x.shape_str());
  }
  // Floor semantics: trailing rows/columns that do not fill a window are ignored.
  const std::size_t oh = h / window, ow = w / window;
  MaxPoolResult res{Tensor4(n, c, oh, ow), std::vector<std::uint32_t>(n * c * oh * ow, 0)};
  std::size_t out_idx = 0;
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* xplane = x.plane(in, ch);
      double* yplane = res.y.plane(in, ch);
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox, ++out_idx) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_at = 0;
          for (std::size_t py = 0; py < window; ++py) {
            const std::size_t iy = oy * window + py;
            for (std::size_t px = 0; px < window; ++px) {
              const std::size_t ix = ox * window + px;
              const double v = xplane[iy * w + ix];
              if (v > best) {
                best = v;
                best_at = iy * w + ix;
              }
            }
          }
          yplane[oy * ow + ox] = best;
          res.argmax[out_idx] = static_cast<std::uint32_t>(best_at);
        }
      }
    }
  }
  return res;
}

Tensor4 maxpool2d_backward(const Tensor4& x, const MaxPoolResult& fwd, const Tensor4& dy,
                           std::size_t window) {
  const auto [n, c, h, w] = x.dims();
  Tensor4 dx(n, c, h, w, 0.0);
  const auto [dn, dc, oh, ow] = dy.dims();
  (void)window;
  std::size_t out_idx = 0;
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* dyplane = dy.plane(in, ch);
      double* dxplane = dx.plane(in, ch);
      for (std::size_t i = 0; i < oh * ow; ++i, ++out_idx) {
        dxplane[fwd.argmax[out_idx]] += dyplane[i];
      }
    }
  }
  return dx;
}

Tensor4 batchnorm_forward_train(const Tensor4& x, const std::vector<double>& gamma,
                                const std::vector<double>& beta, std::vector<double>& running_mean,
                                std::vector<double>& running_var, double momentum, double eps,
                                bool update_running, BatchNormCache& cache) {
  const auto [n, c, h, w] = x.dims();
  const double count = static_cast<double>(n * h * w);
  cache.mean.assign(c, 0.0);
  cache.inv_std.assign(c, 0.0);
  cache.x_hat = Tensor4(n, c, h, w);
  Tensor4 y(n, c, h, w);

  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    for (std::size_t in = 0; in < n; ++in) {
      const double* plane = x.plane(in, ch);
      for (std::size_t i = 0; i < h * w; ++i) mean += plane[i];
    }
    mean /= count;
    double var = 0.0;
    for (std::size_t in = 0; in < n; ++in) {
      const double* plane = x.plane(in, ch);
      for (std::size_t i = 0; i < h * w; ++i) {
        const double d = plane[i] - mean;
        var += d * d;
      }
    }
    var /= count;  // biased, matching the eval-mode formula
    const double inv_std = 1.0 / std::sqrt(var + eps);
    cache.mean[ch] = mean;
    cache.inv_std[ch] = inv_std;
    if (update_running) {
      running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mean;
      running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * var;
    }
    for (std::size_t in = 0; in < n; ++in) {
      const double* xp = x.plane(in, ch);
      double* hp = cache.x_hat.plane(in, ch);
      double* yp = y.plane(in, ch);
      for (std::size_t i = 0; i < h * w; ++i) {
        hp[i] = (xp[i] - mean) * inv_std;
        yp[i] = gamma[ch] * hp[i] + beta[ch];
      }
    }
  }
  return y;
}

Tensor4 batchnorm_forward_eval(const Tensor4& x, const std::vector<double>& gamma,
                               const std::vector<double>& beta,
                               const std::vector<double>& running_mean,
                               const std::vector<double>& running_var, double eps) {
  const auto [n, c, h, w] = x.dims();
  Tensor4 y(n, c, h, w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double inv_std = 1.0 / std::sqrt(running_var[ch] + eps);
    for (std::size_t in = 0; in < n; ++in) {
      const double* xp = x.plane(in, ch);
      double* yp = y.plane(in, ch);
      for (std::size_t i = 0; i < h * w; ++i) {
        yp[i] = gamma[ch] * (xp[i] - running_mean[ch]) * inv_std + beta[ch];
      }
    }
  }
  return y;
}

BatchNormGrads batchnorm_backward(const Tensor4& dy, const std::vector<double>& gamma,
                                  const BatchNormCache& cache) {
  const auto [n, c, h, w] = dy.dims();
  const double count = static_cast<double>(n * h * w);
  BatchNormGrads g{Tensor4(n, c, h, w), std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};

  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t in = 0; in < n; ++in) {
      const double* dyp = dy.plane(in, ch);
      const double* hp = cache.x_hat.plane(in, ch);
      for (std::size_t i = 0; i < h * w; ++i) {
        sum_dy += dyp[i];
        sum_dy_xhat += dyp[i] * hp[i];
      }
    }
    g.dbeta[ch] = sum_dy;
    g.dgamma[ch] = sum_dy_xhat;
    const double scale = gamma[ch] * cache.inv_std[ch];
    for (std::size_t in = 0; in < n; ++in) {
      const double* dyp = dy.plane(in, ch);
      const double* hp = cache.x_hat.plane(in, ch);
      double* dxp = g.dx.plane(in, ch);
      for (std::size_t i = 0; i < h * w; ++i) {
        dxp[i] = scale * (dyp[i] - sum_dy / count - hp[i] * sum_dy_xhat / count);
      }
    }
  }
  return g;
}

Tensor4 dropout_forward(const Tensor4& x, double p, Rng& rng, std::vector<std::uint8_t>& mask) {
  if (p < 0.0 || p >= 1.0) {
    throw ArgumentError("dropout: p must be in [0, 1), got " + std::to_string(p));
  }
  mask.resize(x.size());
  Tensor4 y = x;
  const double scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool keep = rng.uniform() >= p;
    mask[i] = keep ? 1 : 0;
    y.values()[i] = keep ? x.values()[i] * scale : 0.0;
  }
  return y;
}

Tensor4 dropout_backward(const Tensor4& dy, double p, const std::vector<std::uint8_t>& mask) {
  Tensor4 dx = dy;
  const double scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < dx.size(); ++i) {
    dx.values()[i] = mask[i] ? dy.values()[i] * scale : 0.0;
  }
  return dx;
}

Tensor4 relu_forward(const Tensor4& x) {
  Tensor4 y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor4 relu_backward(const Tensor4& x, const Tensor4& dy) {
  Tensor4 dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (x.values()[i] <= 0.0) dx.values()[i] = 0.0;
  }
  return dx;
}

Tensor4 leaky_relu_forward(const Tensor4& x, double alpha) {
  Tensor4 y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : alpha * v;
  return y;
}

Tensor4 leaky_relu_backward(const Tensor4& x, const Tensor4& dy, double alpha) {
  Tensor4 dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (x.values()[i] <= 0.0) dx.values()[i] *= alpha;
  }
  return dx;
}

DenseMatrix softmax(const DenseMatrix& logits) {
  DenseMatrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double* in = logits.row(r);
    double* o = out.row(r);
    double mx = in[0];
    for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, in[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (std::size_t c = 0; c < logits.cols(); ++c) o[c] /= sum;
  }
  return out;
}

DenseMatrix softmax_backward(const DenseMatrix& probs, const DenseMatrix& dprobs) {
  DenseMatrix dlogits(probs.rows(), probs.cols());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const double* s = probs.row(r);
    const double* dp = dprobs.row(r);
    double dot = 0.0;
    for (std::size_t c = 0; c < probs.cols(); ++c) dot += s[c] * dp[c];
    for (std::size_t c = 0; c < probs.cols(); ++c) {
      dlogits(r, c) = s[c] * (dp[c] - dot);
    }
  }
  return dlogits;
}

CrossEntropyResult cross_entropy_with_logits(const DenseMatrix& logits,
                                             const std::vector<int>& labels) {
  if (labels.size() != logits.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.rows()) + " rows");
  }
  const std::size_t n = logits.rows(), k = logits.cols();
  CrossEntropyResult res;
  res.dlogits = DenseMatrix(n, k);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw ArgumentError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                          std::to_string(k) + " classes");
    }
    const double* in = logits.row(r);
    double mx = in[0];
    std::size_t arg = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (in[c] > mx) {
        mx = in[c];
        arg = c;
      }
    }
    if (arg == static_cast<std::size_t>(label)) ++res.correct;
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += std::exp(in[c] - mx);
    // loss = log(sum_c exp(x_c - mx)) - (x_label - mx); exact ln K at uniform logits.
    total += std::log(sum) - (in[label] - mx);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::exp(in[c] - mx) / sum;
      res.dlogits(r, c) = (p - (c == static_cast<std::size_t>(label) ? 1.0 : 0.0)) * inv_n;
    }
  }
  res.loss = total / static_cast<double>(n);
  return res;
}

}  // namespace dictnet
