// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "rawlab/error.hpp"
#include "rawlab/metrics.hpp"
#include "support.hpp"

using namespace rawlab;
using namespace rawlab::metrics;
using raw::PackedRaw;

namespace {

PackedRaw random_packed(std::uint64_t seed, std::size_t h, std::size_t w, float lo = 0.0f, float hi = 1.0f) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<float> d(lo, hi);
  PackedRaw p(h, w);
  for (float& v : p.data) v = d(gen);
  return p;
}

// Values on a 2^-20 grid below 0.025: adding 0.1f to them is exact in float,
// so the offset images differ by exactly 0.1f everywhere.
PackedRaw dark_packed(std::uint64_t seed, std::size_t h, std::size_t w) {
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<int> k(0, 26000);
  PackedRaw p(h, w);
  for (float& v : p.data) v = std::ldexp(static_cast<float>(k(gen)), -20);
  return p;
}

PackedRaw offset(PackedRaw p, float d) {
  for (float& v : p.data) v += d;
  return p;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("psnr closed forms") {
    const PackedRaw a = dark_packed(1, 16, 16);
    CHECK(std::abs(psnr(a, offset(a, 0.1f)) - 20.0) <= 1e-6);
    CHECK(std::abs(psnr(a, offset(a, 0.1f)) - static_cast<double>(oracle::psnr(a, offset(a, 0.1f)))) < 1e-9);
    CHECK(std::isinf(psnr(a, a)));
    const PackedRaw b = random_packed(2, 16, 16);
    CHECK(std::abs(psnr(a, b) - static_cast<double>(oracle::psnr(a, b))) < 1e-9);
    CHECK(psnr(a, b) == psnr(b, a));
    CHECK(psnr(a, offset(a, 0.01f)) > psnr(a, offset(a, 0.02f)));
    CHECK_THROWS_AS(psnr(a, PackedRaw(8, 8)), Error);
  }

  TEST_CASE("ssim of identical images is exactly one") {
    const PackedRaw a = random_packed(3, 24, 20);
    CHECK(ssim(a, a) == 1.0);
  }

  TEST_CASE("ssim matches the direct-window oracle") {
    for (std::uint64_t s = 0; s < 4; ++s) {
      const PackedRaw a = random_packed(10 + s, 20 + s, 18);
      const PackedRaw b = random_packed(20 + s, 20 + s, 18);
      CHECK(std::abs(ssim(a, b) - static_cast<double>(oracle::ssim(a, b))) < 1e-7);
      CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    }
  }

  TEST_CASE("ssim of constant images follows the luminance term") {
    const double d = 0.01;
    const PackedRaw a(16, 16, 0.5f);
    const PackedRaw b(16, 16, static_cast<float>(0.5 + d));
    const double mb = static_cast<double>(static_cast<float>(0.5 + d));
    const double expected = (2 * 0.5 * mb + kSsimC1) / (0.25 + mb * mb + kSsimC1);
    CHECK(std::abs(ssim(a, b) - expected) < 1e-9);
  }

  TEST_CASE("ssim is invariant under a shared channel permutation") {
    const PackedRaw a = random_packed(5, 16, 16), b = random_packed(6, 16, 16);
    auto permute = [](const PackedRaw& p) {
      PackedRaw q(p.height, p.width);
      const std::size_t order[4] = {2, 0, 3, 1};
      for (std::size_t c = 0; c < 4; ++c) std::copy_n(p.plane(order[c]), p.plane_size(), q.plane(c));
      return q;
    };
    CHECK(ssim(permute(a), permute(b)) == doctest::Approx(ssim(a, b)).epsilon(1e-12));
    CHECK_THROWS_AS(ssim(PackedRaw(8, 16), PackedRaw(8, 16)), Error);
  }

  TEST_CASE("directory evaluation reports means, infinities and errors") {
    testing::TempDir pred, gt;
    const PackedRaw a = random_packed(7, 16, 16, 0.0f, 0.5f);
    const PackedRaw b = random_packed(8, 16, 16, 0.0f, 0.5f);
    raw::write_packed(gt / "a.npy", a);
    raw::write_packed(gt / "b.npy", b);
    raw::write_packed(gt / "only_gt.npy", b);
    raw::write_packed(pred / "a.npy", offset(a, 0.1f));
    raw::write_packed(pred / "b.npy", offset(b, 0.01f));
    raw::write_packed(pred / "only_pred.npy", b);

    const MetricReport r = evaluate_dir(pred.path(), gt.path());
    REQUIRE(r.per_image.size() == 2);
    CHECK(r.per_image[0].name == "a.npy");
    CHECK(r.mean_psnr == doctest::Approx(30.0).epsilon(1e-6));
    CHECK(r.errors.size() == 2);

    nlohmann::json j = r;
    CHECK(validate_report_json(j).empty());
    CHECK(j["images"].size() == 2);
    CHECK(to_csv(r).rfind("name,psnr,ssim\n", 0) == 0);

    const MetricReport same = evaluate_dir(gt.path(), gt.path());
    CHECK(same.mean_ssim == 1.0);
    CHECK(std::isinf(same.mean_psnr));
    nlohmann::json js = same;
    CHECK(js["mean_psnr"].is_null());
    CHECK(js["mean_psnr_infinite"] == true);
    CHECK(js["images"][0]["psnr"].is_null());
    CHECK(validate_report_json(js).empty());

    nlohmann::json broken = j;
    broken.erase("mean_ssim");
    CHECK_FALSE(validate_report_json(broken).empty());
  }
}
