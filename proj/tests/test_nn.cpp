// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rawlab/error.hpp"
#include "rawlab/nn.hpp"

using namespace rawlab;
using namespace rawlab::nn;

namespace {

std::size_t pick(std::mt19937_64& gen, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(gen);
}

ConvParams random_conv(std::mt19937_64& gen, int in, int out, int k, int stride, int groups) {
  ConvParams p(in, out, k, stride, k / 2, groups);
  oracle::fill_random(gen, p.weight, 0.5f);
  oracle::fill_random(gen, p.bias, 0.5f);
  return p;
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("conv2d special cases") {
    std::mt19937_64 gen(1);
    const Tensor x = oracle::random_tensor(gen, {1, 3, 5, 6});
    ConvParams id(3, 3, 1);
    for (int c = 0; c < 3; ++c) id.w(c, c, 0, 0) = 1.0f;
    CHECK(conv2d(x, id) == x);

    Tensor impulse({1, 1, 5, 5});
    impulse.at(0, 0, 2, 2) = 1.0f;
    ConvParams ones(1, 1, 3);
    std::fill(ones.weight.begin(), ones.weight.end(), 1.0f);
    const Tensor plateau = conv2d(impulse, ones);
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t xx = 0; xx < 5; ++xx) {
        const bool inside = y >= 1 && y <= 3 && xx >= 1 && xx <= 3;
        CHECK(plateau.at(0, 0, y, xx) == (inside ? 1.0f : 0.0f));
      }

    CHECK_THROWS_AS(conv2d(x, ConvParams(4, 2, 3)), Error);
    ConvParams strided(3, 2, 3, 2, 0);
    CHECK_THROWS_AS(conv2d(oracle::random_tensor(gen, {1, 3, 6, 6}), strided), Error);  // (6 - 3) / 2 not integral
  }

  TEST_CASE("conv2d matches the scalar oracle on random shapes") {
    std::mt19937_64 gen(2);
    for (int trial = 0; trial < 40; ++trial) {
      const int groups = static_cast<int>(pick(gen, 1, 2));
      const int in = groups * static_cast<int>(pick(gen, 1, 4));
      const int out = groups * static_cast<int>(pick(gen, 1, 4));
      const int k = static_cast<int>(2 * pick(gen, 0, 2) + 1);
      const int stride = static_cast<int>(pick(gen, 1, 2));
      const std::size_t h = stride * pick(gen, 3, 8) + 1, w = stride * pick(gen, 3, 8) + 1;
      const Tensor x = oracle::random_tensor(gen, {pick(gen, 1, 2), static_cast<std::size_t>(in), h, w});
      ConvParams p = random_conv(gen, in, out, k, stride, groups);
      p.padding = k / 2;
      if ((h + 2 * p.padding - k) % stride || (w + 2 * p.padding - k) % stride) continue;
      CHECK(max_abs_diff(conv2d(x, p), oracle::conv2d(x, p)) <= 1e-5);
    }
  }

  TEST_CASE("conv2d is linear") {
    std::mt19937_64 gen(3);
    ConvParams p = random_conv(gen, 3, 5, 3, 1, 1);
    p.bias.assign(5, 0.0f);
    const Tensor a = oracle::random_tensor(gen, {1, 3, 9, 9}), b = oracle::random_tensor(gen, {1, 3, 9, 9});
    Tensor mix(a.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = 0.7f * a.data()[i] - 1.3f * b.data()[i];
    const Tensor ya = conv2d(a, p), yb = conv2d(b, p), ym = conv2d(mix, p);
    Tensor expect(ym.shape());
    for (std::size_t i = 0; i < expect.size(); ++i) expect.data()[i] = 0.7f * ya.data()[i] - 1.3f * yb.data()[i];
    CHECK(max_abs_diff(ym, expect) <= 1e-5);
  }

  TEST_CASE("depthwise and pointwise variants") {
    std::mt19937_64 gen(4);
    const Tensor x = oracle::random_tensor(gen, {2, 4, 7, 6});
    ConvParams dw(4, 4, 3, 1, 1, 4);
    for (int c = 0; c < 4; ++c) dw.w(c, 0, 1, 1) = 1.0f;
    CHECK(depthwise_conv(x, dw) == x);

    const ConvParams rdw = random_conv(gen, 4, 4, 5, 1, 4);
    CHECK(max_abs_diff(depthwise_conv(x, rdw), oracle::conv2d(x, rdw)) <= 1e-5);

    const ConvParams pw = random_conv(gen, 4, 6, 1, 1, 1);
    const Tensor y = pointwise_conv(x, pw);
    // Matrix product over channels at one pixel.
    for (std::size_t o = 0; o < 6; ++o) {
      double acc = pw.b(static_cast<int>(o));
      for (std::size_t i = 0; i < 4; ++i) acc += pw.w(static_cast<int>(o), static_cast<int>(i), 0, 0) * x.at(1, i, 3, 2);
      CHECK(std::abs(y.at(1, o, 3, 2) - acc) <= 1e-5);
    }
    CHECK_THROWS_AS(pointwise_conv(x, random_conv(gen, 4, 4, 3, 1, 1)), Error);
    CHECK_THROWS_AS(depthwise_conv(x, random_conv(gen, 4, 4, 3, 1, 1)), Error);
  }

  TEST_CASE("transposed convolution matches the scatter oracle") {
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 10; ++trial) {
      const int k = trial % 2 ? 4 : 2;
      TransposedConvParams p(static_cast<int>(pick(gen, 1, 4)), static_cast<int>(pick(gen, 1, 4)), k);
      oracle::fill_random(gen, p.weight);
      oracle::fill_random(gen, p.bias);
      const Tensor x = oracle::random_tensor(gen, {pick(gen, 1, 2), static_cast<std::size_t>(p.in_channels), pick(gen, 1, 7), pick(gen, 1, 7)});
      const Tensor y = transposed_conv2x(x, p);
      CHECK(y.shape() == Shape4{x.n(), static_cast<std::size_t>(p.out_channels), 2 * x.h(), 2 * x.w()});
      CHECK(max_abs_diff(y, oracle::transposed_conv2x(x, p)) <= 1e-5);
    }
  }

  TEST_CASE("pixel shuffle layout and inverse") {
    Tensor x({1, 4, 1, 1}, std::vector<float>{1, 2, 3, 4});
    const Tensor y = pixel_shuffle(x, 2);
    CHECK(y.shape() == Shape4{1, 1, 2, 2});
    CHECK(y.storage() == std::vector<float>{1, 2, 3, 4});

    std::mt19937_64 gen(6);
    const Tensor r = oracle::random_tensor(gen, {2, 18, 3, 4});
    CHECK(pixel_shuffle(r, 1) == r);
    CHECK(pixel_shuffle(r, 3) == oracle::pixel_shuffle(r, 3));
    CHECK(pixel_unshuffle(pixel_shuffle(r, 3), 3) == r);
    const Tensor s = oracle::random_tensor(gen, {1, 2, 6, 4});
    CHECK(pixel_shuffle(pixel_unshuffle(s, 2), 2) == s);
    CHECK_THROWS_AS(pixel_shuffle(r, 2), Error);
    CHECK_THROWS_AS(pixel_unshuffle(r, 2), Error);
  }

  TEST_CASE("batch norm formula") {
    BnParams bn(1, 0.0f);
    bn.gamma = {2.0f};
    bn.beta = {1.0f};
    bn.running_mean = {0.5f};
    bn.running_var = {0.25f};
    CHECK(batchnorm_infer(Tensor({1, 1, 1, 1}, 1.0f), bn).at(0, 0, 0, 0) == doctest::Approx(3.0).epsilon(1e-7));

    std::mt19937_64 gen(7);
    const Tensor x = oracle::random_tensor(gen, {2, 3, 4, 5});
    CHECK(max_abs_diff(batchnorm_infer(x, BnParams(3, 1e-9f)), x) <= 1e-6);
    BnParams r(3, 1e-5f);
    oracle::fill_random(gen, r.gamma);
    oracle::fill_random(gen, r.beta);
    oracle::fill_random(gen, r.running_mean);
    for (float& v : r.running_var) v = std::uniform_real_distribution<float>(0.1f, 2.0f)(gen);
    CHECK(max_abs_diff(batchnorm_infer(x, r), oracle::batchnorm(x, r)) <= 1e-6);
    CHECK_THROWS_AS(batchnorm_infer(x, BnParams(2)), Error);
  }

  TEST_CASE("gate and channel attention") {
    std::mt19937_64 gen(8);
    const Tensor t = oracle::random_tensor(gen, {1, 2, 3, 3});
    Tensor stacked({1, 4, 3, 3}, 1.0f);
    std::copy_n(t.data(), t.size(), stacked.plane(0, 2));
    CHECK(simple_gate(stacked) == t);
    CHECK_THROWS_AS(simple_gate(oracle::random_tensor(gen, {1, 7, 2, 2})), Error);

    const Tensor x = oracle::random_tensor(gen, {2, 6, 5, 4});
    CHECK(max_abs_diff(simple_gate(x), oracle::simple_gate(x)) <= 1e-6);

    ConvParams z1(6, 2, 1), z2(2, 6, 1);
    const Tensor half = se_block(x, z1, z2);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(half.data()[i] == doctest::Approx(0.5f * x.data()[i]));

    const ConvParams w1 = random_conv(gen, 6, 2, 1, 1, 1), w2 = random_conv(gen, 2, 6, 1, 1, 1);
    CHECK(max_abs_diff(se_block(x, w1, w2), oracle::se(x, w1, w2)) <= 1e-5);

    const ConvParams ws = random_conv(gen, 6, 6, 1, 1, 1);
    CHECK(max_abs_diff(sca(x, ws), oracle::sca(x, ws)) <= 1e-5);

    // On a constant image the pooled vector is the constant itself.
    const Tensor flat({1, 2, 4, 4}, 0.5f);
    ConvParams wc(2, 2, 1);
    wc.weight = {1.0f, 2.0f, -1.0f, 0.5f};
    wc.bias = {0.1f, 0.0f};
    const Tensor y = sca(flat, wc);
    CHECK(y.at(0, 0, 1, 1) == doctest::Approx(0.5 * (0.5 * 3.0 + 0.1)).epsilon(1e-6));
    CHECK(y.at(0, 1, 2, 3) == doctest::Approx(0.5 * (-0.25)).epsilon(1e-6));

    // Explicit pooled statistics override the tensor's own means.
    const Tensor pooled = global_avg_pool(x);
    CHECK(sca(x, pooled, ws) == sca(x, ws));
    CHECK(se_block(x, pooled, w1, w2) == se_block(x, w1, w2));
  }

  TEST_CASE("layer norm matches the oracle") {
    std::mt19937_64 gen(9);
    const Tensor x = oracle::random_tensor(gen, {2, 5, 4, 3});
    std::vector<float> w(5), b(5);
    oracle::fill_random(gen, w);
    oracle::fill_random(gen, b);
    CHECK(max_abs_diff(layer_norm(x, w, b, 1e-6f), oracle::layer_norm(x, w, b, 1e-6f)) <= 1e-5);
    CHECK_THROWS_AS(layer_norm(x, std::vector<float>(4), b), Error);
  }

  TEST_CASE("activations") {
    const Tensor x({1, 1, 1, 4}, std::vector<float>{-1.0f, 2.0f, 0.0f, 1.0f});
    CHECK(relu(x).storage() == std::vector<float>{0.0f, 2.0f, 0.0f, 1.0f});
    const Tensor g = gelu(x);
    CHECK(g.at(0, 0, 0, 2) == 0.0f);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(std::abs(g.data()[i] - static_cast<double>(oracle::gelu(x.data()[i]))) <= 1e-6);
    CHECK(std::abs(g.at(0, 0, 0, 3) - 0.8413447) <= 1e-6);
    CHECK(sigmoid(x).at(0, 0, 0, 2) == 0.5f);
  }

  TEST_CASE("bilinear resize") {
    const Tensor c({1, 2, 5, 3}, 0.25f);
    const Tensor up = bilinear_resize(c, 2.0);
    CHECK(up.shape() == Shape4{1, 2, 10, 6});
    for (float v : up.storage()) CHECK(v == doctest::Approx(0.25f));

    // Half-pixel centers: 1-D ramp [0, 1] doubles to [0, 0.25, 0.75, 1].
    const Tensor ramp({1, 1, 1, 2}, std::vector<float>{0.0f, 1.0f});
    const Tensor r = bilinear_resize(ramp, 2.0);
    REQUIRE(r.shape() == Shape4{1, 1, 2, 4});
    for (std::size_t y = 0; y < 2; ++y)
      CHECK(std::vector<float>(r.plane(0, 0) + 4 * y, r.plane(0, 0) + 4 * y + 4) ==
            std::vector<float>{0.0f, 0.25f, 0.75f, 1.0f});
  }
}
