// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "rawlab/error.hpp"
#include "rawlab/preview.hpp"
#include "support.hpp"

using namespace rawlab;
using namespace rawlab::preview;

TEST_SUITE("preview") {
  TEST_CASE("tone curve") {
    CHECK(tone_map(0.0f) == 0.0f);
    CHECK(tone_map(1.0f) == doctest::Approx(1.0f));
    CHECK(tone_map(0.25f) == doctest::Approx(0.625f));
  }

  TEST_CASE("flat gray renders to a constant image") {
    const raw::PackedRaw flat(8, 6, 0.18f);
    std::size_t h = 0, w = 0;
    const auto rgb = render(flat, {}, &h, &w);
    CHECK(h == 16);
    CHECK(w == 12);
    REQUIRE(rgb.size() == 16 * 12 * 3);
    const double expect = std::pow(1.25 * 0.18 / (0.18 + 0.25), 1.0 / 2.2) * 255.0;
    for (auto v : rgb) CHECK(v == static_cast<std::uint8_t>(std::lround(expect)));
  }

  TEST_CASE("demosaic reproduces constant color planes") {
    raw::MosaicImage m(6, 8);
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 8; ++x) m.at(y, x) = y % 2 == 0 ? (x % 2 == 0 ? 0.6f : 0.3f) : (x % 2 == 0 ? 0.3f : 0.1f);
    const RgbImage img = demosaic_bilinear(m);
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        CHECK(img.at(y, x, 0) == doctest::Approx(0.6f));
        CHECK(img.at(y, x, 1) == doctest::Approx(0.3f));
        CHECK(img.at(y, x, 2) == doctest::Approx(0.1f));
      }
  }

  TEST_CASE("a red-only scene renders red") {
    raw::PackedRaw p(4, 4, 0.0f);
    std::fill_n(p.plane(raw::kR), p.plane_size(), 0.8f);
    const auto rgb = render(p, {});
    for (std::size_t i = 0; i < rgb.size(); i += 3) {
      CHECK(rgb[i] > 10 * (rgb[i + 1] + 1));
      CHECK(rgb[i] > 10 * (rgb[i + 2] + 1));
    }
  }

  TEST_CASE("gray world equalizes channel means") {
    raw::PackedRaw p(4, 4, 0.2f);
    std::fill_n(p.plane(raw::kR), p.plane_size(), 0.4f);
    std::fill_n(p.plane(raw::kB), p.plane_size(), 0.1f);
    RgbImage img = demosaic_bilinear(raw::unpack(p));
    gray_world(img);
    for (std::size_t c = 0; c < 3; ++c) CHECK(img.at(3, 3, c) == doctest::Approx(0.2f));
    CHECK(parse_white_balance(to_string(WhiteBalance::GrayWorld)) == WhiteBalance::GrayWorld);
    CHECK_THROWS_AS(parse_white_balance("auto"), Error);
  }

  TEST_CASE("PPM encoding") {
    const std::vector<std::uint8_t> rgb(2 * 3 * 3, 7);
    const std::string ppm = encode_ppm(2, 3, rgb);
    CHECK(ppm.rfind("P6\n3 2\n255\n", 0) == 0);
    CHECK(ppm.size() == 11 + rgb.size());
    testing::TempDir dir;
    write_ppm(dir / "a.ppm", 2, 3, rgb);
    CHECK(std::filesystem::file_size(dir / "a.ppm") == ppm.size());
    CHECK_THROWS_AS(encode_ppm(2, 2, rgb), Error);
  }
}
