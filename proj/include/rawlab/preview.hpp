// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rawlab/raw.hpp"

namespace rawlab::preview {

enum class WhiteBalance { None, GrayWorld };

struct PreviewOptions {
  double gamma = 2.2;
  WhiteBalance wb = WhiteBalance::None;
};

/// Interleaved RGB, row-major.
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  float& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * 3 + c]; }
};

/// Bilinear RGGB demosaic. Missing colors are the mean of the nearest 2 or 4
/// same-color sites; borders mirror without repeating the edge sample so
/// that the Bayer parity is kept.
RgbImage demosaic_bilinear(const raw::MosaicImage& m);

/// Scales R and B so that their means match the green mean.
void gray_world(RgbImage& img);

/// 1.25 * x / (x + 0.25), which maps 1 to 1.
float tone_map(float x);

/// Full chain from a packed image to 8-bit interleaved RGB.
std::vector<std::uint8_t> render(const raw::PackedRaw& packed, const PreviewOptions& options,
                                 std::size_t* height = nullptr, std::size_t* width = nullptr);

std::string encode_ppm(std::size_t height, std::size_t width, const std::vector<std::uint8_t>& rgb);
void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& rgb);

std::string to_string(WhiteBalance wb);
WhiteBalance parse_white_balance(const std::string& s);

}  // namespace rawlab::preview
