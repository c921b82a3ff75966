// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "rawlab/tensor.hpp"

namespace rawlab::nn {

/// Square-kernel 2-D convolution parameters.
/// Weight layout (out_channels, in_channels / groups, kernel, kernel).
/// An empty bias means zero bias.
struct ConvParams {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int groups = 1;
  std::vector<float> weight;
  std::vector<float> bias;

  ConvParams() = default;
  ConvParams(int in, int out, int k, int stride = 1, int padding = -1, int groups = 1);

  int in_per_group() const { return in_channels / groups; }
  std::size_t weight_count() const;
  std::size_t param_count() const { return weight_count() + static_cast<std::size_t>(out_channels); }

  float& w(int o, int i, int ky, int kx) {
    return weight[((static_cast<std::size_t>(o) * in_per_group() + i) * kernel + ky) * kernel + kx];
  }
  float w(int o, int i, int ky, int kx) const {
    return weight[((static_cast<std::size_t>(o) * in_per_group() + i) * kernel + ky) * kernel + kx];
  }
  float b(int o) const { return bias.empty() ? 0.0f : bias[static_cast<std::size_t>(o)]; }

  /// Odd kernel, channels divisible by groups, buffers sized to match.
  void validate() const;
  bool operator==(const ConvParams&) const = default;
};

/// Stride-2 transposed convolution doubling the spatial size.
/// Weight layout (in_channels, out_channels, kernel, kernel); kernel 2
/// (padding 0) or 4 (padding 1).
struct TransposedConvParams {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 2;
  std::vector<float> weight;
  std::vector<float> bias;

  TransposedConvParams() = default;
  TransposedConvParams(int in, int out, int k);

  int padding() const { return (kernel - 2) / 2; }
  std::size_t weight_count() const;
  void validate() const;
};

/// Inference-time batch normalization statistics.
struct BnParams {
  std::vector<float> gamma, beta, running_mean, running_var;
  float eps = 1e-5f;

  BnParams() = default;
  /// Identity statistics: gamma 1, beta 0, mean 0, var 1.
  explicit BnParams(int channels, float eps = 1e-5f);

  int channels() const { return static_cast<int>(gamma.size()); }
  void validate() const;
};

Tensor conv2d(const Tensor& x, const ConvParams& p);
/// conv2d restricted to groups == channels.
Tensor depthwise_conv(const Tensor& x, const ConvParams& p);
/// conv2d restricted to 1x1 kernels.
Tensor pointwise_conv(const Tensor& x, const ConvParams& p);
Tensor transposed_conv2x(const Tensor& x, const TransposedConvParams& p);

/// (N, C*r*r, H, W) -> (N, C, rH, rW) with the usual sub-pixel layout:
/// out[c][y*r+i][x*r+j] = in[c*r*r + i*r + j][y][x].
Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pixel_unshuffle(const Tensor& x, int r);

Tensor batchnorm_infer(const Tensor& x, const BnParams& bn);

/// Product of the first and second channel halves.
Tensor simple_gate(const Tensor& x);
/// (N, C, 1, 1) spatial means.
Tensor global_avg_pool(const Tensor& x);
/// Simple channel attention: x * conv1x1(gap(x)).
Tensor sca(const Tensor& x, const ConvParams& w);
/// Squeeze-and-excitation: x * sigmoid(w2(relu(w1(gap(x))))).
Tensor se_block(const Tensor& x, const ConvParams& w1, const ConvParams& w2);
// Variants taking precomputed (N, C, 1, 1) pooled statistics in place of
// gap(x), used when the statistics come from a larger image than x.
Tensor sca(const Tensor& x, const Tensor& pooled, const ConvParams& w);
Tensor se_block(const Tensor& x, const Tensor& pooled, const ConvParams& w1, const ConvParams& w2);

/// Per-pixel normalization across channels followed by a per-channel affine
/// (the 2-D layer norm used by NAF blocks). Biased variance.
Tensor layer_norm(const Tensor& x, const std::vector<float>& weight, const std::vector<float>& bias,
                  float eps = 1e-6f);

Tensor relu(const Tensor& x);
/// Exact form 0.5 * x * (1 + erf(x / sqrt(2))).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor clamp(const Tensor& x, float lo, float hi);

/// Bilinear resampling with half-pixel centers (source coordinates below
/// zero clamp to the first sample). Output size floor(H * scale).
Tensor bilinear_resize(const Tensor& x, double scale);

}  // namespace rawlab::nn
