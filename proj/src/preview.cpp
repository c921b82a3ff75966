// SPDX-License-Identifier: Apache-2.0
#include "rawlab/preview.hpp"

#include <algorithm>
#include <cmath>

#include "rawlab/error.hpp"
#include "rawlab/io.hpp"

namespace rawlab::preview {
namespace {

// Reflect-101 index, valid for extents >= 2.
std::ptrdiff_t mirror(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

}  // namespace

RgbImage demosaic_bilinear(const raw::MosaicImage& m) {
  if (m.height < 2 || m.width < 2 || m.height % 2 || m.width % 2)
    fail(ErrorKind::Dimension, "demosaic needs even dimensions of at least 2");
  const auto h = static_cast<std::ptrdiff_t>(m.height);
  const auto w = static_cast<std::ptrdiff_t>(m.width);
  auto px = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    return m.at(static_cast<std::size_t>(mirror(y, h)), static_cast<std::size_t>(mirror(x, w)));
  };
  RgbImage out{m.height, m.width, std::vector<float>(m.height * m.width * 3)};
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      const float c = px(y, x);
      const float cross = 0.25f * (px(y - 1, x) + px(y + 1, x) + px(y, x - 1) + px(y, x + 1));
      const float diag = 0.25f * (px(y - 1, x - 1) + px(y - 1, x + 1) + px(y + 1, x - 1) + px(y + 1, x + 1));
      const float horiz = 0.5f * (px(y, x - 1) + px(y, x + 1));
      const float vert = 0.5f * (px(y - 1, x) + px(y + 1, x));
      float r, g, b;
      const bool even_row = y % 2 == 0, even_col = x % 2 == 0;
      if (even_row && even_col) {
        r = c, g = cross, b = diag;
      } else if (even_row) {
        r = horiz, g = c, b = vert;
      } else if (even_col) {
        r = vert, g = c, b = horiz;
      } else {
        r = diag, g = cross, b = c;
      }
      auto* dst = &out.data[(static_cast<std::size_t>(y) * m.width + static_cast<std::size_t>(x)) * 3];
      dst[0] = r, dst[1] = g, dst[2] = b;
    }
  }
  return out;
}

void gray_world(RgbImage& img) {
  double sum[3] = {0, 0, 0};
  for (std::size_t i = 0; i < img.data.size(); ++i) sum[i % 3] += img.data[i];
  for (int c : {0, 2}) {
    if (sum[c] <= 0.0) continue;
    const auto gain = static_cast<float>(sum[1] / sum[c]);
    for (std::size_t i = static_cast<std::size_t>(c); i < img.data.size(); i += 3) img.data[i] *= gain;
  }
}

float tone_map(float x) {
  x = std::max(x, 0.0f);
  return 1.25f * x / (x + 0.25f);
}

std::vector<std::uint8_t> render(const raw::PackedRaw& packed, const PreviewOptions& options,
                                 std::size_t* height, std::size_t* width) {
  if (!(options.gamma > 0.0)) fail(ErrorKind::Argument, "gamma must be positive");
  RgbImage img = demosaic_bilinear(raw::unpack(packed));
  if (options.wb == WhiteBalance::GrayWorld) gray_world(img);
  const double inv_gamma = 1.0 / options.gamma;
  std::vector<std::uint8_t> out(img.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = std::clamp(static_cast<double>(tone_map(img.data[i])), 0.0, 1.0);
    out[i] = static_cast<std::uint8_t>(std::lround(std::pow(v, inv_gamma) * 255.0));
  }
  if (height) *height = img.height;
  if (width) *width = img.width;
  return out;
}

std::string encode_ppm(std::size_t height, std::size_t width, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != height * width * 3) fail(ErrorKind::Shape, "RGB buffer does not match the image size");
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
  return out;
}

void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& rgb) {
  io::write_file_atomic(path, encode_ppm(height, width, rgb));
}

std::string to_string(WhiteBalance wb) { return wb == WhiteBalance::GrayWorld ? "gray-world" : "none"; }

WhiteBalance parse_white_balance(const std::string& s) {
  if (s == "none") return WhiteBalance::None;
  if (s == "gray-world") return WhiteBalance::GrayWorld;
  fail(ErrorKind::Argument, "unknown white balance '" + s + "' (expected none or gray-world)");
}

}  // namespace rawlab::preview
