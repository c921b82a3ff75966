// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rawlab/nn.hpp"

namespace rawlab::rep {

using nn::BnParams;
using nn::ConvParams;

enum class BranchKind { Conv3x3, Conv1x1, Conv5x5, Identity, ConvBn };

/// One parallel path of a multi-branch block. `params` is unused for
/// Identity; `bn` is required for ConvBn and optional for every other kind.
struct RepBranch {
  BranchKind kind = BranchKind::Conv3x3;
  ConvParams params;
  std::optional<BnParams> bn;
};

/// Parallel branches summed at the output. All branches map `channels`
/// channels to `channels` channels at stride 1 with "same" padding and share
/// the same group count.
struct RepBranchBlock {
  int channels = 0;
  int groups = 1;
  std::vector<RepBranch> branches;

  /// Largest kernel among the branches (1 for identity-only blocks).
  int receptive_field() const;
  /// Throws unless every branch is consistent and fits in max_kernel.
  void validate(int max_kernel) const;
};

/// Folds inference batch norm into the preceding convolution:
/// W' = W * gamma / sqrt(var + eps), b' = beta + (b - mean) * gamma / sqrt(var + eps).
ConvParams fuse_conv_bn(const ConvParams& conv, const BnParams& bn);

/// Folds a batch norm that runs *before* a 1x1 convolution into it.
ConvParams fuse_bn_pointwise(const BnParams& bn, const ConvParams& conv);

/// Embeds a smaller odd kernel in the center of a target x target kernel.
ConvParams pad_kernel(const ConvParams& conv, int target);

/// Collapses every branch into one max_kernel x max_kernel convolution
/// (max_kernel 3 or 5): 1x1 and 3x3 kernels are zero padded to the center,
/// identity becomes a centered unit kernel, batch norms are folded first,
/// then weights and biases are summed.
ConvParams fuse_branches(const RepBranchBlock& block, int max_kernel = 3);

/// Multi-branch forward pass: the sum of every branch's output.
Tensor forward(const RepBranchBlock& block, const Tensor& x);

struct EquivalenceCertificate {
  double max_abs_diff = 0.0;
  int trials = 0;
  Shape4 input_shape;
  bool passed = false;
  double tolerance = 0.0;
  std::uint64_t seed = 0;
};

struct CertifyOptions {
  int trials = 100;
  double tolerance = 1e-5;
  std::uint64_t seed = 0x5eed;
  /// Spatial size of the random probe inputs; N is 1, C comes from the block.
  std::size_t height = 16;
  std::size_t width = 16;
};

/// Runs `reference` and `candidate` on seeded uniform [-1, 1] inputs and
/// records the worst elementwise difference.
EquivalenceCertificate certify(const std::function<Tensor(const Tensor&)>& reference,
                               const std::function<Tensor(const Tensor&)>& candidate,
                               int channels, const CertifyOptions& options);

EquivalenceCertificate certify(const RepBranchBlock& block, const ConvParams& fused,
                               const CertifyOptions& options = {});
EquivalenceCertificate certify(const ConvParams& conv, const BnParams& bn,
                               const ConvParams& fused, const CertifyOptions& options = {});

std::string to_string(BranchKind k);
BranchKind parse_branch_kind(const std::string& s);

void to_json(nlohmann::json& j, const EquivalenceCertificate& c);

}  // namespace rawlab::rep
