// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "rawlab/error.hpp"
#include "rawlab/repfuse.hpp"

using namespace rawlab;
using namespace rawlab::rep;

namespace {

ConvParams random_conv(std::mt19937_64& gen, int c, int k, int groups = 1) {
  ConvParams p(c, c, k, 1, k / 2, groups);
  oracle::fill_random(gen, p.weight, 0.5f);
  oracle::fill_random(gen, p.bias, 0.5f);
  return p;
}

BnParams random_bn(std::mt19937_64& gen, int c) {
  BnParams bn(c, 1e-5f);
  std::uniform_real_distribution<float> pos(0.5f, 1.5f), sym(-0.5f, 0.5f);
  for (auto& v : bn.gamma) v = pos(gen);
  for (auto& v : bn.beta) v = sym(gen);
  for (auto& v : bn.running_mean) v = sym(gen);
  for (auto& v : bn.running_var) v = pos(gen);
  return bn;
}

RepBranchBlock three_branch(std::mt19937_64& gen, int c, bool with_5x5 = false) {
  RepBranchBlock b;
  b.channels = c;
  b.branches.push_back({BranchKind::ConvBn, random_conv(gen, c, 3), random_bn(gen, c)});
  b.branches.push_back({BranchKind::Conv1x1, random_conv(gen, c, 1), std::nullopt});
  b.branches.push_back({BranchKind::Identity, {}, random_bn(gen, c)});
  if (with_5x5) b.branches.push_back({BranchKind::Conv5x5, random_conv(gen, c, 5), random_bn(gen, c)});
  return b;
}

}  // namespace

TEST_SUITE("repfuse") {
  TEST_CASE("conv-bn folding") {
    std::mt19937_64 gen(1);
    const ConvParams conv = random_conv(gen, 4, 3);
    BnParams identity(4, 0.0f);
    const ConvParams same = fuse_conv_bn(conv, identity);
    CHECK(same.weight == conv.weight);
    CHECK(same.bias == conv.bias);

    BnParams zero = random_bn(gen, 4);
    std::fill(zero.gamma.begin(), zero.gamma.end(), 0.0f);
    const ConvParams z = fuse_conv_bn(conv, zero);
    for (float w : z.weight) CHECK(w == 0.0f);
    CHECK(z.bias == zero.beta);

    const BnParams bn = random_bn(gen, 4);
    const auto cert = certify(conv, bn, fuse_conv_bn(conv, bn));
    CHECK(cert.passed);
    CHECK(cert.max_abs_diff <= 1e-5);
    CHECK(cert.trials == 100);
    CHECK_THROWS_AS(fuse_conv_bn(conv, BnParams(3)), Error);
  }

  TEST_CASE("bn folded into a following pointwise conv") {
    std::mt19937_64 gen(2);
    ConvParams pw(4, 6, 1);
    oracle::fill_random(gen, pw.weight);
    oracle::fill_random(gen, pw.bias);
    const BnParams bn = random_bn(gen, 4);
    const ConvParams fused = fuse_bn_pointwise(bn, pw);
    const Tensor x = oracle::random_tensor(gen, {1, 4, 6, 6});
    CHECK(max_abs_diff(nn::conv2d(nn::batchnorm_infer(x, bn), pw), nn::conv2d(x, fused)) <= 1e-5);
  }

  TEST_CASE("identity-only and zero-conv blocks fuse to the identity") {
    std::mt19937_64 gen(3);
    RepBranchBlock id;
    id.channels = 3;
    id.branches.push_back({BranchKind::Identity, {}, std::nullopt});
    const ConvParams f = fuse_branches(id);
    CHECK(f.kernel == 3);
    for (int o = 0; o < 3; ++o)
      for (int i = 0; i < 3; ++i)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) CHECK(f.w(o, i, ky, kx) == (o == i && ky == 1 && kx == 1 ? 1.0f : 0.0f));
    const Tensor x = oracle::random_tensor(gen, {1, 3, 5, 5});
    CHECK(nn::conv2d(x, f) == x);

    RepBranchBlock zero = id;
    zero.branches.push_back({BranchKind::Conv3x3, ConvParams(3, 3, 3), std::nullopt});
    CHECK(max_abs_diff(nn::conv2d(x, fuse_branches(zero)), x) == 0.0);
  }

  TEST_CASE("plain conv3x3 block fuses to itself") {
    std::mt19937_64 gen(4);
    RepBranchBlock b;
    b.channels = 4;
    b.branches.push_back({BranchKind::Conv3x3, random_conv(gen, 4, 3), std::nullopt});
    const ConvParams f = fuse_branches(b);
    CHECK(f.weight == b.branches[0].params.weight);
    CHECK(f.bias == b.branches[0].params.bias);
  }

  TEST_CASE("multi-branch fusion is equivalent and sized by the kernel") {
    std::mt19937_64 gen(5);
    const RepBranchBlock b3 = three_branch(gen, 4);
    const ConvParams f3 = fuse_branches(b3, 3);
    CHECK(f3.param_count() == static_cast<std::size_t>(4 * (4 * 9 + 1)));
    const auto c3 = certify(b3, f3);
    CHECK(c3.passed);
    CHECK(c3.input_shape == Shape4{1, 4, 16, 16});

    const RepBranchBlock b5 = three_branch(gen, 4, true);
    CHECK_THROWS_AS(fuse_branches(b5, 3), Error);
    const ConvParams f5 = fuse_branches(b5, 5);
    CHECK(f5.kernel == 5);
    CHECK(certify(b5, f5).passed);

    // Additivity: fused output equals the sum of the branch outputs.
    const Tensor x = oracle::random_tensor(gen, {2, 4, 7, 9});
    CHECK(max_abs_diff(nn::conv2d(x, f3), forward(b3, x)) <= 1e-5);
  }

  TEST_CASE("grouped blocks fuse too") {
    std::mt19937_64 gen(6);
    RepBranchBlock b;
    b.channels = 4;
    b.groups = 2;
    b.branches.push_back({BranchKind::Conv3x3, random_conv(gen, 4, 3, 2), random_bn(gen, 4)});
    b.branches.push_back({BranchKind::Identity, {}, std::nullopt});
    CHECK(certify(b, fuse_branches(b)).passed);
  }

  TEST_CASE("injected faults are detected and arguments checked") {
    std::mt19937_64 gen(7);
    const RepBranchBlock b = three_branch(gen, 4);
    ConvParams f = fuse_branches(b);
    f.weight[13] += 1e-2f;
    const auto cert = certify(b, f);
    CHECK_FALSE(cert.passed);
    CHECK(cert.max_abs_diff > 1e-5);

    CertifyOptions none;
    none.trials = 0;
    CHECK_THROWS_AS(certify(b, fuse_branches(b), none), Error);

    // Deterministic in the recorded seed.
    CHECK(certify(b, f).max_abs_diff == cert.max_abs_diff);
    nlohmann::json j = cert;
    CHECK(j["passed"] == false);
    CHECK(j["seed"] == cert.seed);
  }
}
