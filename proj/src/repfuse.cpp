// SPDX-License-Identifier: Apache-2.0
#include "rawlab/repfuse.hpp"

#include <algorithm>
#include <cmath>

#include "rawlab/error.hpp"
#include "rawlab/rng.hpp"

namespace rawlab::rep {
namespace {

int branch_kernel(const RepBranch& b) {
  switch (b.kind) {
    case BranchKind::Identity: return 1;
    case BranchKind::Conv1x1: return 1;
    case BranchKind::Conv3x3: return 3;
    case BranchKind::Conv5x5: return 5;
    case BranchKind::ConvBn: return b.params.kernel;
  }
  return 0;
}

ConvParams identity_kernel(int channels, int groups) {
  ConvParams id(channels, channels, 1, 1, 0, groups);
  const int per_group = channels / groups;
  for (int o = 0; o < channels; ++o) id.w(o, o % per_group, 0, 0) = 1.0f;
  return id;
}

// The branch as a plain convolution with its batch norm folded in.
ConvParams canonical(const RepBranch& b, int channels, int groups) {
  ConvParams conv = b.kind == BranchKind::Identity ? identity_kernel(channels, groups) : b.params;
  if (conv.bias.empty()) conv.bias.assign(static_cast<std::size_t>(conv.out_channels), 0.0f);
  if (b.bn) conv = fuse_conv_bn(conv, *b.bn);
  return conv;
}

}  // namespace

int RepBranchBlock::receptive_field() const {
  int k = 1;
  for (const auto& b : branches) k = std::max(k, branch_kernel(b));
  return k;
}

void RepBranchBlock::validate(int max_kernel) const {
  if (max_kernel != 3 && max_kernel != 5)
    fail(ErrorKind::Argument, "rep blocks fuse to 3x3 or 5x5 kernels only");
  if (branches.empty()) fail(ErrorKind::Argument, "rep block has no branches");
  if (channels < 1 || groups < 1 || channels % groups != 0)
    fail(ErrorKind::Argument, "rep block channels must be divisible by groups");
  for (const auto& b : branches) {
    if (b.kind == BranchKind::ConvBn && !b.bn)
      fail(ErrorKind::Argument, "conv_bn branch without batch norm");
    if (b.bn) {
      b.bn->validate();
      if (b.bn->channels() != channels) fail(ErrorKind::Shape, "branch batch norm channel mismatch");
    }
    if (b.kind == BranchKind::Identity) continue;
    const ConvParams& p = b.params;
    p.validate();
    if (p.in_channels != channels || p.out_channels != channels)
      fail(ErrorKind::Shape, "rep branch channels must equal the block's");
    if (p.groups != groups) fail(ErrorKind::Shape, "rep branches must share one group count");
    if (p.stride != 1) fail(ErrorKind::Argument, "rep branches must have stride 1");
    if (p.kernel != branch_kernel(b))
      fail(ErrorKind::Argument, "branch kind " + to_string(b.kind) + " has a " +
                                    std::to_string(p.kernel) + "x" + std::to_string(p.kernel) + " kernel");
    if (p.kernel > max_kernel)
      fail(ErrorKind::Argument, "branch kernel " + std::to_string(p.kernel) +
                                    " exceeds the fusion size " + std::to_string(max_kernel));
    if (p.padding != p.kernel / 2)
      fail(ErrorKind::Argument, "rep branch padding must preserve spatial size");
  }
}

ConvParams fuse_conv_bn(const ConvParams& conv, const BnParams& bn) {
  conv.validate();
  bn.validate();
  if (bn.channels() != conv.out_channels)
    fail(ErrorKind::Shape, "batch norm has " + std::to_string(bn.channels()) +
                               " channels, conv produces " + std::to_string(conv.out_channels));
  ConvParams out = conv;
  out.bias.assign(static_cast<std::size_t>(conv.out_channels), 0.0f);
  const std::size_t per_out = conv.weight_count() / static_cast<std::size_t>(conv.out_channels);
  for (int o = 0; o < conv.out_channels; ++o) {
    const auto uo = static_cast<std::size_t>(o);
    const double scale = bn.gamma[uo] / std::sqrt(static_cast<double>(bn.running_var[uo]) + bn.eps);
    for (std::size_t i = 0; i < per_out; ++i)
      out.weight[uo * per_out + i] = static_cast<float>(conv.weight[uo * per_out + i] * scale);
    out.bias[uo] = static_cast<float>(bn.beta[uo] + (conv.b(o) - bn.running_mean[uo]) * scale);
  }
  return out;
}

ConvParams fuse_bn_pointwise(const BnParams& bn, const ConvParams& conv) {
  conv.validate();
  bn.validate();
  if (conv.kernel != 1 || conv.groups != 1)
    fail(ErrorKind::Argument, "only dense 1x1 convolutions absorb a preceding batch norm");
  if (bn.channels() != conv.in_channels) fail(ErrorKind::Shape, "batch norm / conv channel mismatch");
  ConvParams out = conv;
  out.bias.assign(static_cast<std::size_t>(conv.out_channels), 0.0f);
  for (int o = 0; o < conv.out_channels; ++o) {
    double b = conv.b(o);
    for (int i = 0; i < conv.in_channels; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const double scale = bn.gamma[ui] / std::sqrt(static_cast<double>(bn.running_var[ui]) + bn.eps);
      const double shift = bn.beta[ui] - bn.running_mean[ui] * scale;
      out.w(o, i, 0, 0) = static_cast<float>(conv.w(o, i, 0, 0) * scale);
      b += conv.w(o, i, 0, 0) * shift;
    }
    out.bias[static_cast<std::size_t>(o)] = static_cast<float>(b);
  }
  return out;
}

ConvParams pad_kernel(const ConvParams& conv, int target) {
  if (target < conv.kernel || (target - conv.kernel) % 2 != 0)
    fail(ErrorKind::Argument, "cannot center a " + std::to_string(conv.kernel) + "x" +
                                  std::to_string(conv.kernel) + " kernel in " + std::to_string(target));
  if (target == conv.kernel) return conv;
  ConvParams out(conv.in_channels, conv.out_channels, target, conv.stride, target / 2, conv.groups);
  out.bias = conv.bias;
  const int off = (target - conv.kernel) / 2;
  for (int o = 0; o < conv.out_channels; ++o)
    for (int i = 0; i < conv.in_per_group(); ++i)
      for (int y = 0; y < conv.kernel; ++y)
        for (int x = 0; x < conv.kernel; ++x) out.w(o, i, y + off, x + off) = conv.w(o, i, y, x);
  return out;
}

ConvParams fuse_branches(const RepBranchBlock& block, int max_kernel) {
  block.validate(max_kernel);
  ConvParams fused(block.channels, block.channels, max_kernel, 1, max_kernel / 2, block.groups);
  for (const auto& b : block.branches) {
    const ConvParams c = pad_kernel(canonical(b, block.channels, block.groups), max_kernel);
    for (std::size_t i = 0; i < fused.weight.size(); ++i) fused.weight[i] += c.weight[i];
    for (std::size_t o = 0; o < fused.bias.size(); ++o) fused.bias[o] += c.bias[o];
  }
  return fused;
}

Tensor forward(const RepBranchBlock& block, const Tensor& x) {
  block.validate(std::max(3, block.receptive_field()));
  Tensor sum(Shape4{x.n(), static_cast<std::size_t>(block.channels), x.h(), x.w()});
  for (const auto& b : block.branches) {
    Tensor y = b.kind == BranchKind::Identity ? x : nn::conv2d(x, b.params);
    if (b.bn) y = nn::batchnorm_infer(y, *b.bn);
    sum = nn::add(sum, y);
  }
  return sum;
}

EquivalenceCertificate certify(const std::function<Tensor(const Tensor&)>& reference,
                               const std::function<Tensor(const Tensor&)>& candidate,
                               int channels, const CertifyOptions& options) {
  if (options.trials < 1) fail(ErrorKind::Argument, "certification needs at least one trial");
  if (!(options.tolerance >= 0.0)) fail(ErrorKind::Argument, "tolerance must be >= 0");
  EquivalenceCertificate cert;
  cert.trials = options.trials;
  cert.tolerance = options.tolerance;
  cert.seed = options.seed;
  cert.input_shape = Shape4{1, static_cast<std::size_t>(channels), options.height, options.width};
  Rng rng(options.seed);
  for (int t = 0; t < options.trials; ++t) {
    Tensor x(cert.input_shape);
    for (float& v : x.storage()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const Tensor a = reference(x);
    const Tensor b = candidate(x);
    if (!(a.shape() == b.shape()))
      fail(ErrorKind::Shape, "forms disagree on output shape: " + a.shape().str() + " vs " + b.shape().str());
    cert.max_abs_diff = std::max(cert.max_abs_diff, max_abs_diff(a, b));
  }
  cert.passed = cert.max_abs_diff <= cert.tolerance;
  return cert;
}

EquivalenceCertificate certify(const RepBranchBlock& block, const ConvParams& fused,
                               const CertifyOptions& options) {
  if (fused.in_channels != block.channels || fused.out_channels != block.channels)
    fail(ErrorKind::Shape, "fused conv does not match the block's channels");
  return certify([&](const Tensor& x) { return forward(block, x); },
                 [&](const Tensor& x) { return nn::conv2d(x, fused); }, block.channels, options);
}

EquivalenceCertificate certify(const ConvParams& conv, const BnParams& bn, const ConvParams& fused,
                               const CertifyOptions& options) {
  if (fused.in_channels != conv.in_channels || fused.out_channels != conv.out_channels)
    fail(ErrorKind::Shape, "fused conv does not match the original's channels");
  return certify([&](const Tensor& x) { return nn::batchnorm_infer(nn::conv2d(x, conv), bn); },
                 [&](const Tensor& x) { return nn::conv2d(x, fused); }, conv.in_channels, options);
}

std::string to_string(BranchKind k) {
  switch (k) {
    case BranchKind::Conv3x3: return "conv3x3";
    case BranchKind::Conv1x1: return "conv1x1";
    case BranchKind::Conv5x5: return "conv5x5";
    case BranchKind::Identity: return "identity";
    case BranchKind::ConvBn: return "conv_bn";
  }
  return "?";
}

BranchKind parse_branch_kind(const std::string& s) {
  for (auto k : {BranchKind::Conv3x3, BranchKind::Conv1x1, BranchKind::Conv5x5, BranchKind::Identity,
                 BranchKind::ConvBn})
    if (to_string(k) == s) return k;
  fail(ErrorKind::Validation, "unknown rep branch kind '" + s + "'");
}

void to_json(nlohmann::json& j, const EquivalenceCertificate& c) {
  const Shape4& s = c.input_shape;
  j = {{"max_abs_diff", c.max_abs_diff},
       {"trials", c.trials},
       {"input_shape", {s.n, s.c, s.h, s.w}},
       {"passed", c.passed},
       {"tolerance", c.tolerance},
       {"seed", c.seed}};
}

}  // namespace rawlab::rep
