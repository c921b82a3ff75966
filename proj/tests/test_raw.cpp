// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <random>

#include "rawlab/error.hpp"
#include "rawlab/npy.hpp"
#include "rawlab/raw.hpp"
#include "support.hpp"

using namespace rawlab;
using namespace rawlab::raw;

namespace {

MosaicImage random_mosaic(std::mt19937_64& gen, std::size_t h, std::size_t w) {
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  MosaicImage m(h, w);
  for (float& v : m.data) v = d(gen);
  return m;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Io;
}

}  // namespace

TEST_SUITE("raw") {
  TEST_CASE("normalize maps black and white levels to the unit interval") {
    SensorMeta meta{64.0, 1023.0, 10};
    MosaicImage m(2, 2);
    m.data = {64.0f, 1023.0f, 543.5f, 2000.0f};
    const MosaicImage n = normalize(m, meta);
    CHECK(n.data[0] == 0.0f);
    CHECK(n.data[1] == 1.0f);
    CHECK(n.data[2] == doctest::Approx((543.5 - 64.0) / 959.0).epsilon(1e-7));
    CHECK(n.data[2] == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(n.data[3] == 1.0f);  // hot pixel clamps
  }

  TEST_CASE("normalize rejects odd dimensions and bad metadata") {
    SensorMeta meta{0.0, 1023.0, 10};
    CHECK(kind_of([&] { normalize(MosaicImage(3, 4), meta); }) == ErrorKind::Dimension);
    SensorMeta bad{100.0, 50.0, 10};
    CHECK(kind_of([&] { normalize(MosaicImage(2, 2), bad); }) == ErrorKind::Meta);
    SensorMeta too_white{0.0, 2000.0, 10};
    CHECK(kind_of([&] { too_white.validate(); }) == ErrorKind::Meta);
    SensorMeta odd_depth{0.0, 100.0, 9};
    CHECK(kind_of([&] { odd_depth.validate(); }) == ErrorKind::Meta);
  }

  TEST_CASE("pack follows the RGGB layout") {
    MosaicImage m(2, 2);
    m.data = {1.0f, 2.0f, 3.0f, 4.0f};
    const PackedRaw p = pack(m);
    REQUIRE(p.height == 1);
    REQUIRE(p.width == 1);
    CHECK(p.at(kR, 0, 0) == 1.0f);
    CHECK(p.at(kG1, 0, 0) == 2.0f);
    CHECK(p.at(kG2, 0, 0) == 3.0f);
    CHECK(p.at(kB, 0, 0) == 4.0f);
    CHECK(unpack(p) == m);
  }

  TEST_CASE("pack of a larger mosaic matches the index definition") {
    std::mt19937_64 gen(1);
    const MosaicImage m = random_mosaic(gen, 6, 8);
    const PackedRaw p = pack(m);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(p.at(0, i, j) == m.at(2 * i, 2 * j));
        CHECK(p.at(1, i, j) == m.at(2 * i, 2 * j + 1));
        CHECK(p.at(2, i, j) == m.at(2 * i + 1, 2 * j));
        CHECK(p.at(3, i, j) == m.at(2 * i + 1, 2 * j + 1));
      }
  }

  TEST_CASE("constant mosaic packs to constant channels") {
    const PackedRaw p = pack(MosaicImage(4, 4, 0.25f));
    CHECK(std::all_of(p.data.begin(), p.data.end(), [](float v) { return v == 0.25f; }));
    const MosaicImage z = unpack(PackedRaw(3, 3));
    CHECK(std::all_of(z.data.begin(), z.data.end(), [](float v) { return v == 0.0f; }));
  }

  TEST_CASE("pack and unpack are exact inverses and permute values") {
    std::mt19937_64 gen(2);
    for (int trial = 0; trial < 50; ++trial) {
      std::uniform_int_distribution<std::size_t> side(1, 20);
      const MosaicImage m = random_mosaic(gen, 2 * side(gen), 2 * side(gen));
      const PackedRaw p = pack(m);
      CHECK(unpack(p) == m);
      CHECK(pack(unpack(p)) == p);
      auto a = m.data, b = p.data;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      CHECK(a == b);
    }
    CHECK(kind_of([] { pack(MosaicImage(2, 3)); }) == ErrorKind::Dimension);
  }

  TEST_CASE("extract_patches counts and contents") {
    PackedRaw big(1024, 1024);
    CHECK(extract_patches(big, 512).size() == 4);

    std::mt19937_64 gen(3);
    PackedRaw p(520, 512);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    for (float& v : p.data) v = d(gen);
    const auto patches = extract_patches(p, 512);
    REQUIRE(patches.size() == 1);
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t y = 0; y < 512; y += 37) CHECK(patches[0].at(c, y, 5) == p.at(c, y, 5));

    PackedRaw same(512, 512, 0.5f);
    CHECK(extract_patches(same, 512)[0] == same);

    PackedRaw grid(6, 9);
    for (std::size_t i = 0; i < grid.data.size(); ++i) grid.data[i] = static_cast<float>(i);
    const auto g = extract_patches(grid, 3);
    REQUIRE(g.size() == 6);
    CHECK(g[1].at(2, 0, 0) == grid.at(2, 0, 3));  // row-major scan
    CHECK(g[3].at(1, 1, 2) == grid.at(1, 4, 2));

    CHECK(kind_of([&] { extract_patches(grid, 0); }) == ErrorKind::Argument);
    CHECK(kind_of([&] { extract_patches(grid, 7); }) == ErrorKind::Argument);
  }

  TEST_CASE("packed files are written channel-last and read in either layout") {
    testing::TempDir dir;
    PackedRaw p(3, 5);
    for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] = static_cast<float>(i) * 0.01f;
    write_packed(dir / "p.npy", p);
    const npy::Array a = npy::read(dir / "p.npy");
    CHECK(a.shape == std::vector<std::size_t>{3, 5, 4});
    CHECK(a.data[1] == p.at(1, 0, 0));
    CHECK(read_packed(dir / "p.npy") == p);

    npy::write(dir / "chw.npy", {4, 3, 5}, p.data);
    CHECK(read_packed(dir / "chw.npy") == p);
    npy::write(dir / "bad.npy", {3, 5}, std::vector<float>(15));
    CHECK(kind_of([&] { read_packed(dir / "bad.npy"); }) == ErrorKind::Dimension);
  }

  TEST_CASE("sensor meta sidecar round trip") {
    testing::TempDir dir;
    const SensorMeta meta{512.0, 16383.0, 14};
    write_meta(dir / "m.json", meta);
    const SensorMeta back = read_meta(dir / "m.json");
    CHECK(back.black_level == 512.0);
    CHECK(back.white_level == 16383.0);
    CHECK(back.bit_depth == 14);
  }
}

TEST_SUITE("npy") {
  TEST_CASE("float32 serialization round trip with aligned header") {
    const std::vector<float> data{0.0f, -1.5f, 3.25f, 1e-8f, 7.0f, 8.0f};
    const std::string bytes = npy::serialize({2, 3}, data);
    CHECK(bytes.substr(0, 6) == "\x93NUMPY");
    const std::size_t header = 10 + static_cast<unsigned char>(bytes[8]) + 256u * static_cast<unsigned char>(bytes[9]);
    CHECK(header % 64 == 0);
    CHECK(bytes.size() == header + data.size() * 4);
    const npy::Array a = npy::parse(bytes);
    CHECK(a.shape == std::vector<std::size_t>{2, 3});
    CHECK(a.data == data);
  }

  TEST_CASE("reads uint16, uint8 and float64 payloads") {
    auto make = [](const std::string& descr, const std::string& payload, const std::string& shape) {
      std::string dict = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': " + shape + ", }";
      while ((10 + dict.size() + 1) % 64 != 0) dict += ' ';
      dict += '\n';
      std::string out = "\x93NUMPY";
      out += '\x01';
      out += '\x00';
      out += static_cast<char>(dict.size() & 0xff);
      out += static_cast<char>(dict.size() >> 8);
      return out + dict + payload;
    };
    const std::string u2{"\x01\x00\xff\x03", 4};
    npy::Array a = npy::parse(make("<u2", u2, "(2,)"));
    CHECK(a.data == std::vector<float>{1.0f, 1023.0f});
    CHECK(a.source_dtype == npy::DType::U2);

    npy::Array b = npy::parse(make("|u1", std::string("\x07\x08", 2), "(1, 2)"));
    CHECK(b.data == std::vector<float>{7.0f, 8.0f});

    const double d = 0.125;
    std::string f8(reinterpret_cast<const char*>(&d), 8);
    npy::Array c = npy::parse(make("<f8", f8, "(1,)"));
    CHECK(c.data == std::vector<float>{0.125f});

    CHECK_THROWS_AS(npy::parse(make("<f4", std::string(4, '\0'), "(2,)")), Error);
    std::string fortran = make("<f4", std::string(8, '\0'), "(2,)");
    fortran.replace(fortran.find("False"), 5, "True ");
    CHECK_THROWS_AS(npy::parse(fortran), Error);
    CHECK_THROWS_AS(npy::parse("not an npy file"), Error);
  }
}
