// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace rawlab::raw {

enum class BayerPhase { RGGB };

/// Sensor constants needed to map ADU to unit range and back.
struct SensorMeta {
  double black_level = 0.0;
  double white_level = 1023.0;
  int bit_depth = 10;
  BayerPhase bayer_phase = BayerPhase::RGGB;

  /// Throws ErrorKind::Meta unless 0 <= black < white <= 2^bit_depth - 1
  /// and bit_depth is one of 8/10/12/14/16.
  void validate() const;
};

void to_json(nlohmann::json& j, const SensorMeta& m);
void from_json(const nlohmann::json& j, SensorMeta& m);

/// Single-plane Bayer mosaic, row-major.
struct MosaicImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  MosaicImage() = default;
  MosaicImage(std::size_t h, std::size_t w, float fill = 0.0f)
      : height(h), width(w), data(h * w, fill) {}

  float& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return data[y * width + x]; }

  bool operator==(const MosaicImage&) const = default;
};

/// Channel order of a packed image.
enum Channel : std::size_t { kR = 0, kG1 = 1, kG2 = 2, kB = 3 };
constexpr std::size_t kPackedChannels = 4;

/// Four half-resolution planes [R, G1, G2, B], stored planar (channel-major).
/// `height` and `width` are the packed (half) dimensions.
struct PackedRaw {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  PackedRaw() = default;
  PackedRaw(std::size_t h, std::size_t w, float fill = 0.0f)
      : height(h), width(w), data(kPackedChannels * h * w, fill) {}

  std::size_t plane_size() const { return height * width; }
  float* plane(std::size_t c) { return data.data() + c * plane_size(); }
  const float* plane(std::size_t c) const { return data.data() + c * plane_size(); }

  float& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * height + y) * width + x];
  }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }

  bool operator==(const PackedRaw&) const = default;
};

MosaicImage normalize(const MosaicImage& m, const SensorMeta& meta);
/// Inverse of normalize for in-range values: x * (white - black) + black.
MosaicImage denormalize(const MosaicImage& m, const SensorMeta& meta);

PackedRaw pack(const MosaicImage& m);
MosaicImage unpack(const PackedRaw& p);

/// Non-overlapping size x size tiles in row-major order; the remainder
/// along either axis is dropped.
std::vector<PackedRaw> extract_patches(const PackedRaw& p, int size);

// File helpers. Packed arrays are written channel-last (H, W, 4); both
// (4, H, W) and (H, W, 4) are accepted on read. When both the first and the
// last axis have length 4 the array is taken as channel-last.
MosaicImage read_mosaic(const std::filesystem::path& path);
void write_mosaic(const std::filesystem::path& path, const MosaicImage& m);
PackedRaw read_packed(const std::filesystem::path& path);
void write_packed(const std::filesystem::path& path, const PackedRaw& p);
PackedRaw packed_from_array(const std::vector<std::size_t>& shape, const std::vector<float>& data);

SensorMeta read_meta(const std::filesystem::path& path);
void write_meta(const std::filesystem::path& path, const SensorMeta& meta);

}  // namespace rawlab::raw
