// SPDX-License-Identifier: Apache-2.0
#include "rawlab/nn.hpp"

#include <algorithm>
#include <cmath>

#include "rawlab/error.hpp"

namespace rawlab::nn {
namespace {

std::string dims(int a, int b) { return std::to_string(a) + " vs " + std::to_string(b); }

// Accumulates OB output rows of a stride-1 convolution for one input row and
// one kernel column offset. Summation order per element is fixed by the
// caller's loop nest, so the blocking never changes results.
template <int OB>
inline void accumulate_row(float* __restrict acc, std::size_t ow, const float* __restrict in,
                           const float* w) {
  if constexpr (OB == 4) {
    float* __restrict a0 = acc;
    float* __restrict a1 = acc + ow;
    float* __restrict a2 = acc + 2 * ow;
    float* __restrict a3 = acc + 3 * ow;
    const float w0 = w[0], w1 = w[1], w2 = w[2], w3 = w[3];
    for (std::size_t x = 0; x < ow; ++x) {
      const float v = in[x];
      a0[x] += w0 * v;
      a1[x] += w1 * v;
      a2[x] += w2 * v;
      a3[x] += w3 * v;
    }
  } else {
    for (int b = 0; b < OB; ++b) {
      float* __restrict a = acc + b * ow;
      const float wb = w[b];
      for (std::size_t x = 0; x < ow; ++x) a[x] += wb * in[x];
    }
  }
}

template <int OB>
void conv_block(const std::vector<float>& padded, std::size_t hp, std::size_t wp,
                const ConvParams& p, std::size_t n, int group, int o_first, Tensor& out) {
  const std::size_t oh = out.h(), ow = out.w();
  const int k = p.kernel, s = p.stride, ipg = p.in_per_group();
  const int in_first = group * ipg;
  const std::size_t in_c = static_cast<std::size_t>(p.in_channels);
  std::vector<float> acc(static_cast<std::size_t>(OB) * ow);
  std::vector<float> strided(s == 1 ? 0 : ow);
  std::vector<float> wbuf(static_cast<std::size_t>(OB));

  for (std::size_t y = 0; y < oh; ++y) {
    for (int b = 0; b < OB; ++b)
      std::fill_n(acc.begin() + b * static_cast<long>(ow), ow, p.b(o_first + b));
    for (int i = 0; i < ipg; ++i) {
      const float* plane = &padded[((n * in_c) + static_cast<std::size_t>(in_first + i)) * hp * wp];
      for (int ky = 0; ky < k; ++ky) {
        const float* row = plane + (y * static_cast<std::size_t>(s) + static_cast<std::size_t>(ky)) * wp;
        for (int kx = 0; kx < k; ++kx) {
          for (int b = 0; b < OB; ++b) wbuf[static_cast<std::size_t>(b)] = p.w(o_first + b, i, ky, kx);
          const float* src = row + kx;
          if (s != 1) {
            for (std::size_t x = 0; x < ow; ++x) strided[x] = row[x * static_cast<std::size_t>(s) + static_cast<std::size_t>(kx)];
            src = strided.data();
          }
          accumulate_row<OB>(acc.data(), ow, src, wbuf.data());
        }
      }
    }
    for (int b = 0; b < OB; ++b)
      std::copy_n(acc.begin() + b * static_cast<long>(ow), ow,
                  &out.at(n, static_cast<std::size_t>(o_first + b), y, 0));
  }
}

Tensor gated_by_channel(const Tensor& x, const Tensor& scale) {
  Tensor out = x;
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const float s = scale.at(n, c, 0, 0);
      float* p = out.plane(n, c);
      for (std::size_t i = 0; i < x.shape().plane(); ++i) p[i] *= s;
    }
  return out;
}

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor out = x;
  for (float& v : out.storage()) v = f(v);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

ConvParams::ConvParams(int in, int out, int k, int stride_, int padding_, int groups_)
    : in_channels(in),
      out_channels(out),
      kernel(k),
      stride(stride_),
      padding(padding_ < 0 ? k / 2 : padding_),
      groups(groups_) {
  if (in > 0 && out > 0 && k > 0 && groups_ > 0 && in % groups_ == 0) {
    weight.assign(weight_count(), 0.0f);
    bias.assign(static_cast<std::size_t>(out), 0.0f);
  }
}

std::size_t ConvParams::weight_count() const {
  return static_cast<std::size_t>(out_channels) * static_cast<std::size_t>(in_per_group()) *
         static_cast<std::size_t>(kernel) * static_cast<std::size_t>(kernel);
}

void ConvParams::validate() const {
  if (in_channels < 1 || out_channels < 1 || groups < 1 || stride < 1 || padding < 0)
    fail(ErrorKind::Argument, "conv channels, groups and stride must be positive");
  if (kernel < 1 || kernel % 2 == 0) fail(ErrorKind::Argument, "conv kernel must be odd");
  if (in_channels % groups != 0 || out_channels % groups != 0)
    fail(ErrorKind::Argument, "conv channels must be divisible by groups");
  if (weight.size() != weight_count())
    fail(ErrorKind::Shape, "conv weight has " + std::to_string(weight.size()) +
                               " values, expected " + std::to_string(weight_count()));
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(out_channels))
    fail(ErrorKind::Shape, "conv bias length mismatch");
}

TransposedConvParams::TransposedConvParams(int in, int out, int k)
    : in_channels(in), out_channels(out), kernel(k) {
  if (in > 0 && out > 0 && k > 0) {
    weight.assign(weight_count(), 0.0f);
    bias.assign(static_cast<std::size_t>(out), 0.0f);
  }
}

std::size_t TransposedConvParams::weight_count() const {
  return static_cast<std::size_t>(in_channels) * static_cast<std::size_t>(out_channels) *
         static_cast<std::size_t>(kernel) * static_cast<std::size_t>(kernel);
}

void TransposedConvParams::validate() const {
  if (in_channels < 1 || out_channels < 1)
    fail(ErrorKind::Argument, "transposed conv channels must be positive");
  if (kernel != 2 && kernel != 4)
    fail(ErrorKind::Argument, "transposed conv kernel must be 2 or 4");
  if (weight.size() != weight_count()) fail(ErrorKind::Shape, "transposed conv weight size mismatch");
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(out_channels))
    fail(ErrorKind::Shape, "transposed conv bias length mismatch");
}

BnParams::BnParams(int channels, float eps_)
    : gamma(static_cast<std::size_t>(channels), 1.0f),
      beta(static_cast<std::size_t>(channels), 0.0f),
      running_mean(static_cast<std::size_t>(channels), 0.0f),
      running_var(static_cast<std::size_t>(channels), 1.0f),
      eps(eps_) {}

void BnParams::validate() const {
  const std::size_t c = gamma.size();
  if (c == 0 || beta.size() != c || running_mean.size() != c || running_var.size() != c)
    fail(ErrorKind::Shape, "batch norm parameter lengths differ");
  if (!(eps >= 0.0f)) fail(ErrorKind::Argument, "batch norm eps must be >= 0");
  for (float v : running_var)
    if (!(v >= 0.0f)) fail(ErrorKind::Argument, "batch norm running_var must be >= 0");
}

// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const ConvParams& p) {
  p.validate();
  if (x.c() != static_cast<std::size_t>(p.in_channels))
    fail(ErrorKind::Shape, "conv input channels " + dims(static_cast<int>(x.c()), p.in_channels));
  const std::size_t pad = static_cast<std::size_t>(p.padding);
  const std::size_t hp = x.h() + 2 * pad, wp = x.w() + 2 * pad;
  const std::size_t k = static_cast<std::size_t>(p.kernel), s = static_cast<std::size_t>(p.stride);
  if (hp < k || wp < k) fail(ErrorKind::Shape, "conv kernel larger than padded input");
  if ((hp - k) % s != 0 || (wp - k) % s != 0)
    fail(ErrorKind::Shape, "conv output size is not an integer for input " + x.shape().str());
  const Shape4 os{x.n(), static_cast<std::size_t>(p.out_channels), (hp - k) / s + 1, (wp - k) / s + 1};

  std::vector<float> padded(x.n() * x.c() * hp * wp, 0.0f);
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (std::size_t y = 0; y < x.h(); ++y)
        std::copy_n(x.plane(n, c) + y * x.w(), x.w(), &padded[((n * x.c() + c) * hp + y + pad) * wp + pad]);

  Tensor out(os);
  const int opg = p.out_channels / p.groups;
  const int blocks_per_group = (opg + 3) / 4;
  const long jobs = static_cast<long>(x.n()) * p.groups * blocks_per_group;
#pragma omp parallel for schedule(dynamic)
  for (long job = 0; job < jobs; ++job) {
    const int blk = static_cast<int>(job % blocks_per_group);
    const int g = static_cast<int>((job / blocks_per_group) % p.groups);
    const std::size_t n = static_cast<std::size_t>(job / (static_cast<long>(blocks_per_group) * p.groups));
    const int o_first = g * opg + blk * 4;
    const int remaining = opg - blk * 4;
    if (remaining >= 4) {
      conv_block<4>(padded, hp, wp, p, n, g, o_first, out);
    } else {
      for (int r = 0; r < remaining; ++r) conv_block<1>(padded, hp, wp, p, n, g, o_first + r, out);
    }
  }
  return out;
}

Tensor depthwise_conv(const Tensor& x, const ConvParams& p) {
  if (p.groups != p.in_channels || p.out_channels != p.in_channels)
    fail(ErrorKind::Argument, "depthwise conv needs groups == in == out channels");
  return conv2d(x, p);
}

Tensor pointwise_conv(const Tensor& x, const ConvParams& p) {
  if (p.kernel != 1 || p.padding != 0) fail(ErrorKind::Argument, "pointwise conv needs a 1x1 kernel");
  return conv2d(x, p);
}

Tensor transposed_conv2x(const Tensor& x, const TransposedConvParams& p) {
  p.validate();
  if (x.c() != static_cast<std::size_t>(p.in_channels))
    fail(ErrorKind::Shape, "transposed conv input channels " + dims(static_cast<int>(x.c()), p.in_channels));
  const long pad = p.padding(), k = p.kernel;
  const long ih = static_cast<long>(x.h()), iw = static_cast<long>(x.w());
  const Shape4 os{x.n(), static_cast<std::size_t>(p.out_channels), 2 * x.h(), 2 * x.w()};
  Tensor out(os);
  const long planes = static_cast<long>(os.n * os.c);
#pragma omp parallel for schedule(static)
  for (long job = 0; job < planes; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / os.c;
    const int o = static_cast<int>(static_cast<std::size_t>(job) % os.c);
    float* dst = out.plane(n, static_cast<std::size_t>(o));
    std::fill_n(dst, os.plane(), p.bias.empty() ? 0.0f : p.bias[static_cast<std::size_t>(o)]);
    for (int i = 0; i < p.in_channels; ++i) {
      const float* src = x.plane(n, static_cast<std::size_t>(i));
      const float* w = &p.weight[(static_cast<std::size_t>(i) * p.out_channels + o) * k * k];
      for (long y = 0; y < ih; ++y)
        for (long ky = 0; ky < k; ++ky) {
          const long oy = 2 * y - pad + ky;
          if (oy < 0 || oy >= static_cast<long>(os.h)) continue;
          float* drow = dst + oy * static_cast<long>(os.w);
          for (long xx = 0; xx < iw; ++xx) {
            const float v = src[y * iw + xx];
            for (long kx = 0; kx < k; ++kx) {
              const long ox = 2 * xx - pad + kx;
              if (ox < 0 || ox >= static_cast<long>(os.w)) continue;
              drow[ox] += v * w[ky * k + kx];
            }
          }
        }
    }
  }
  return out;
}

Tensor pixel_shuffle(const Tensor& x, int r) {
  if (r < 1) fail(ErrorKind::Argument, "pixel shuffle factor must be >= 1");
  const std::size_t rr = static_cast<std::size_t>(r) * static_cast<std::size_t>(r);
  if (x.c() % rr != 0)
    fail(ErrorKind::Shape, "pixel shuffle needs channels divisible by r^2, got " + std::to_string(x.c()));
  const std::size_t ur = static_cast<std::size_t>(r);
  Tensor out(Shape4{x.n(), x.c() / rr, x.h() * ur, x.w() * ur});
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < out.c(); ++c)
      for (std::size_t i = 0; i < ur; ++i)
        for (std::size_t j = 0; j < ur; ++j) {
          const float* src = x.plane(n, c * rr + i * ur + j);
          for (std::size_t y = 0; y < x.h(); ++y)
            for (std::size_t xx = 0; xx < x.w(); ++xx)
              out.at(n, c, y * ur + i, xx * ur + j) = src[y * x.w() + xx];
        }
  return out;
}

Tensor pixel_unshuffle(const Tensor& x, int r) {
  if (r < 1) fail(ErrorKind::Argument, "pixel unshuffle factor must be >= 1");
  const std::size_t ur = static_cast<std::size_t>(r);
  if (x.h() % ur != 0 || x.w() % ur != 0)
    fail(ErrorKind::Shape, "pixel unshuffle needs H and W divisible by r, got " + x.shape().str());
  const std::size_t rr = ur * ur;
  Tensor out(Shape4{x.n(), x.c() * rr, x.h() / ur, x.w() / ur});
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (std::size_t i = 0; i < ur; ++i)
        for (std::size_t j = 0; j < ur; ++j) {
          float* dst = out.plane(n, c * rr + i * ur + j);
          for (std::size_t y = 0; y < out.h(); ++y)
            for (std::size_t xx = 0; xx < out.w(); ++xx)
              dst[y * out.w() + xx] = x.at(n, c, y * ur + i, xx * ur + j);
        }
  return out;
}

Tensor batchnorm_infer(const Tensor& x, const BnParams& bn) {
  bn.validate();
  if (x.c() != bn.gamma.size())
    fail(ErrorKind::Shape, "batch norm channels " + dims(static_cast<int>(x.c()), bn.channels()));
  Tensor out = x;
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(bn.running_var[c]) + bn.eps);
      const float scale = static_cast<float>(bn.gamma[c] * inv);
      const float shift = static_cast<float>(bn.beta[c] - bn.running_mean[c] * bn.gamma[c] * inv);
      float* p = out.plane(n, c);
      for (std::size_t i = 0; i < x.shape().plane(); ++i) p[i] = p[i] * scale + shift;
    }
  return out;
}

Tensor simple_gate(const Tensor& x) {
  if (x.c() % 2 != 0)
    fail(ErrorKind::Shape, "simple gate needs an even channel count, got " + std::to_string(x.c()));
  const std::size_t half = x.c() / 2;
  Tensor out(Shape4{x.n(), half, x.h(), x.w()});
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < half; ++c) {
      const float* a = x.plane(n, c);
      const float* b = x.plane(n, c + half);
      float* d = out.plane(n, c);
      for (std::size_t i = 0; i < x.shape().plane(); ++i) d[i] = a[i] * b[i];
    }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  Tensor out(Shape4{x.n(), x.c(), 1, 1});
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const float* p = x.plane(n, c);
      double sum = 0.0;
      for (std::size_t i = 0; i < x.shape().plane(); ++i) sum += p[i];
      out.at(n, c, 0, 0) = static_cast<float>(sum / static_cast<double>(x.shape().plane()));
    }
  return out;
}

Tensor sca(const Tensor& x, const ConvParams& w) { return sca(x, global_avg_pool(x), w); }

Tensor sca(const Tensor& x, const Tensor& pooled, const ConvParams& w) {
  if (w.kernel != 1 || w.in_channels != static_cast<int>(x.c()) || w.out_channels != static_cast<int>(x.c()))
    fail(ErrorKind::Shape, "channel attention needs a CxC 1x1 conv");
  if (!(pooled.shape() == Shape4{x.n(), x.c(), 1, 1})) fail(ErrorKind::Shape, "pooled statistics shape mismatch");
  return gated_by_channel(x, conv2d(pooled, w));
}

Tensor se_block(const Tensor& x, const ConvParams& w1, const ConvParams& w2) {
  return se_block(x, global_avg_pool(x), w1, w2);
}

Tensor se_block(const Tensor& x, const Tensor& pooled, const ConvParams& w1, const ConvParams& w2) {
  if (w1.kernel != 1 || w2.kernel != 1 || w1.in_channels != static_cast<int>(x.c()) ||
      w2.out_channels != static_cast<int>(x.c()) || w1.out_channels != w2.in_channels)
    fail(ErrorKind::Shape, "squeeze-excitation weights inconsistent with input channels");
  if (!(pooled.shape() == Shape4{x.n(), x.c(), 1, 1})) fail(ErrorKind::Shape, "pooled statistics shape mismatch");
  return gated_by_channel(x, sigmoid(conv2d(relu(conv2d(pooled, w1)), w2)));
}

Tensor layer_norm(const Tensor& x, const std::vector<float>& weight, const std::vector<float>& bias, float eps) {
  if (weight.size() != x.c() || bias.size() != x.c()) fail(ErrorKind::Shape, "layer norm parameters must have C entries");
  Tensor out(x.shape());
  const std::size_t hw = x.shape().plane();
  const double inv_c = 1.0 / static_cast<double>(x.c());
  for (std::size_t n = 0; n < x.n(); ++n) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < hw; ++i) {
      double mean = 0.0;
      for (std::size_t c = 0; c < x.c(); ++c) mean += x.plane(n, c)[i];
      mean *= inv_c;
      double var = 0.0;
      for (std::size_t c = 0; c < x.c(); ++c) {
        const double d = x.plane(n, c)[i] - mean;
        var += d * d;
      }
      const double inv_std = 1.0 / std::sqrt(var * inv_c + static_cast<double>(eps));
      for (std::size_t c = 0; c < x.c(); ++c)
        out.plane(n, c)[i] = static_cast<float>((x.plane(n, c)[i] - mean) * inv_std * weight[c] + bias[c]);
    }
  }
  return out;
}

Tensor relu(const Tensor& x) {
  return map(x, [](float v) { return v > 0.0f ? v : 0.0f; });
}

Tensor gelu(const Tensor& x) {
  return map(x, [](float v) {
    const double d = v;
    return static_cast<float>(0.5 * d * (1.0 + std::erf(d / std::sqrt(2.0))));
  });
}

Tensor sigmoid(const Tensor& x) {
  return map(x, [](float v) { return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v)))); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()))
    fail(ErrorKind::Shape, "cannot add " + a.shape().str() + " and " + b.shape().str());
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Tensor clamp(const Tensor& x, float lo, float hi) {
  return map(x, [lo, hi](float v) { return std::clamp(v, lo, hi); });
}

Tensor bilinear_resize(const Tensor& x, double scale) {
  if (!(scale > 0.0)) fail(ErrorKind::Argument, "resize scale must be positive");
  const auto oh = static_cast<std::size_t>(std::floor(static_cast<double>(x.h()) * scale));
  const auto ow = static_cast<std::size_t>(std::floor(static_cast<double>(x.w()) * scale));
  if (oh == 0 || ow == 0) fail(ErrorKind::Argument, "resize produces an empty image");

  struct Lerp {
    std::size_t lo, hi;
    double t;
  };
  auto axis = [scale](std::size_t out_len, std::size_t in_len) {
    std::vector<Lerp> v(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
      const double src = std::max(0.0, (static_cast<double>(i) + 0.5) / scale - 0.5);
      const auto lo = std::min(static_cast<std::size_t>(src), in_len - 1);
      v[i] = {lo, std::min(lo + 1, in_len - 1), src - static_cast<double>(lo)};
    }
    return v;
  };
  const auto ry = axis(oh, x.h());
  const auto rx = axis(ow, x.w());

  Tensor out(Shape4{x.n(), x.c(), oh, ow});
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const auto& a = ry[i];
          const auto& b = rx[j];
          const double top = (1.0 - b.t) * x.at(n, c, a.lo, b.lo) + b.t * x.at(n, c, a.lo, b.hi);
          const double bot = (1.0 - b.t) * x.at(n, c, a.hi, b.lo) + b.t * x.at(n, c, a.hi, b.hi);
          out.at(n, c, i, j) = static_cast<float>((1.0 - a.t) * top + a.t * bot);
        }
  return out;
}

}  // namespace rawlab::nn
