// SPDX-License-Identifier: Apache-2.0
#include "rawlab/raw.hpp"

#include <algorithm>
#include <cmath>

#include "rawlab/error.hpp"
#include "rawlab/io.hpp"
#include "rawlab/npy.hpp"

namespace rawlab::raw {
namespace {

void require_even(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0)
    fail(ErrorKind::Dimension, "mosaic dimensions must be even and non-zero, got " +
                                   std::to_string(h) + "x" + std::to_string(w));
}

}  // namespace

void SensorMeta::validate() const {
  static constexpr int kDepths[] = {8, 10, 12, 14, 16};
  if (std::find(std::begin(kDepths), std::end(kDepths), bit_depth) == std::end(kDepths))
    fail(ErrorKind::Meta, "bit_depth must be one of 8/10/12/14/16, got " +
                              std::to_string(bit_depth));
  const double max_code = std::ldexp(1.0, bit_depth) - 1.0;
  if (!(black_level >= 0.0)) fail(ErrorKind::Meta, "black_level must be >= 0");
  if (!(white_level > black_level)) fail(ErrorKind::Meta, "white_level must exceed black_level");
  if (white_level > max_code)
    fail(ErrorKind::Meta, "white_level exceeds 2^bit_depth - 1");
}

void to_json(nlohmann::json& j, const SensorMeta& m) {
  j = nlohmann::json{{"black_level", m.black_level},
                     {"white_level", m.white_level},
                     {"bit_depth", m.bit_depth}};
}

void from_json(const nlohmann::json& j, SensorMeta& m) {
  try {
    m.black_level = j.at("black_level").get<double>();
    m.white_level = j.at("white_level").get<double>();
    m.bit_depth = j.at("bit_depth").get<int>();
    if (j.contains("bayer_phase") && j.at("bayer_phase").get<std::string>() != "RGGB")
      fail(ErrorKind::Meta, "only the RGGB bayer phase is supported");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Meta, std::string("bad sensor meta: ") + e.what());
  }
}

MosaicImage normalize(const MosaicImage& m, const SensorMeta& meta) {
  require_even(m.height, m.width);
  meta.validate();
  const double black = meta.black_level;
  const double range = meta.white_level - meta.black_level;
  MosaicImage out(m.height, m.width);
  std::transform(m.data.begin(), m.data.end(), out.data.begin(), [&](float v) {
    return static_cast<float>(std::clamp((static_cast<double>(v) - black) / range, 0.0, 1.0));
  });
  return out;
}

MosaicImage denormalize(const MosaicImage& m, const SensorMeta& meta) {
  meta.validate();
  const double range = meta.white_level - meta.black_level;
  MosaicImage out(m.height, m.width);
  std::transform(m.data.begin(), m.data.end(), out.data.begin(), [&](float v) {
    return static_cast<float>(static_cast<double>(v) * range + meta.black_level);
  });
  return out;
}

PackedRaw pack(const MosaicImage& m) {
  require_even(m.height, m.width);
  PackedRaw p(m.height / 2, m.width / 2);
  for (std::size_t i = 0; i < p.height; ++i) {
    const float* even = &m.data[(2 * i) * m.width];
    const float* odd = &m.data[(2 * i + 1) * m.width];
    for (std::size_t j = 0; j < p.width; ++j) {
      p.at(kR, i, j) = even[2 * j];
      p.at(kG1, i, j) = even[2 * j + 1];
      p.at(kG2, i, j) = odd[2 * j];
      p.at(kB, i, j) = odd[2 * j + 1];
    }
  }
  return p;
}

MosaicImage unpack(const PackedRaw& p) {
  if (p.height == 0 || p.width == 0 || p.data.size() != kPackedChannels * p.plane_size())
    fail(ErrorKind::Shape, "packed image has inconsistent shape");
  MosaicImage m(2 * p.height, 2 * p.width);
  for (std::size_t i = 0; i < p.height; ++i) {
    float* even = &m.data[(2 * i) * m.width];
    float* odd = &m.data[(2 * i + 1) * m.width];
    for (std::size_t j = 0; j < p.width; ++j) {
      even[2 * j] = p.at(kR, i, j);
      even[2 * j + 1] = p.at(kG1, i, j);
      odd[2 * j] = p.at(kG2, i, j);
      odd[2 * j + 1] = p.at(kB, i, j);
    }
  }
  return m;
}

std::vector<PackedRaw> extract_patches(const PackedRaw& p, int size) {
  if (size <= 0) fail(ErrorKind::Argument, "patch size must be positive");
  const auto s = static_cast<std::size_t>(size);
  if (s > std::min(p.height, p.width))
    fail(ErrorKind::Argument, "patch size " + std::to_string(size) + " exceeds image side");
  std::vector<PackedRaw> patches;
  const std::size_t rows = p.height / s;
  const std::size_t cols = p.width / s;
  patches.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t q = 0; q < cols; ++q) {
      PackedRaw patch(s, s);
      for (std::size_t c = 0; c < kPackedChannels; ++c)
        for (std::size_t y = 0; y < s; ++y)
          std::copy_n(p.plane(c) + (r * s + y) * p.width + q * s, s, patch.plane(c) + y * s);
      patches.push_back(std::move(patch));
    }
  }
  return patches;
}

MosaicImage read_mosaic(const std::filesystem::path& path) {
  npy::Array a = npy::read(path);
  if (a.shape.size() != 2)
    fail(ErrorKind::Dimension, path.string() + ": mosaic must be a 2-D array");
  MosaicImage m;
  m.height = a.shape[0];
  m.width = a.shape[1];
  m.data = std::move(a.data);
  return m;
}

void write_mosaic(const std::filesystem::path& path, const MosaicImage& m) {
  npy::write(path, {m.height, m.width}, m.data);
}

PackedRaw packed_from_array(const std::vector<std::size_t>& shape, const std::vector<float>& data) {
  if (shape.size() != 3)
    fail(ErrorKind::Dimension, "packed array must be 3-D, (H, W, 4) or (4, H, W)");
  PackedRaw p;
  if (shape[2] == kPackedChannels) {
    p = PackedRaw(shape[0], shape[1]);
    const std::size_t plane = p.plane_size();
    for (std::size_t i = 0; i < plane; ++i)
      for (std::size_t c = 0; c < kPackedChannels; ++c)
        p.data[c * plane + i] = data[i * kPackedChannels + c];
  } else if (shape[0] == kPackedChannels) {
    p = PackedRaw(shape[1], shape[2]);
    p.data = data;
  } else {
    fail(ErrorKind::Dimension, "packed array needs an axis of length 4");
  }
  if (p.height == 0 || p.width == 0) fail(ErrorKind::Dimension, "packed array is empty");
  return p;
}

PackedRaw read_packed(const std::filesystem::path& path) {
  npy::Array a = npy::read(path);
  try {
    return packed_from_array(a.shape, a.data);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

void write_packed(const std::filesystem::path& path, const PackedRaw& p) {
  const std::size_t plane = p.plane_size();
  std::vector<float> hwc(p.data.size());
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < kPackedChannels; ++c)
      hwc[i * kPackedChannels + c] = p.data[c * plane + i];
  npy::write(path, {p.height, p.width, kPackedChannels}, hwc);
}

SensorMeta read_meta(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Meta, path.string() + ": " + e.what());
  }
  SensorMeta meta = j.get<SensorMeta>();
  meta.validate();
  return meta;
}

void write_meta(const std::filesystem::path& path, const SensorMeta& meta) {
  io::write_file_atomic(path, nlohmann::json(meta).dump(2) + "\n");
}

}  // namespace rawlab::raw
