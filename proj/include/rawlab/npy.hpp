// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rawlab::npy {

/// Element types understood by the reader. Everything is widened to float
/// on load; the writer only produces little-endian float32.
enum class DType { F4, F8, U1, U2 };

struct Array {
  std::vector<std::size_t> shape;
  std::vector<float> data;
  DType source_dtype = DType::F4;

  std::size_t size() const;
};

Array read(const std::filesystem::path& path);
Array parse(const std::string& bytes);

/// Serializes as NPY v1.0, `<f4`, C order. Header padded to 64 bytes.
std::string serialize(const std::vector<std::size_t>& shape, const std::vector<float>& data);

/// Writes through a temporary file and renames it into place.
void write(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
           const std::vector<float>& data);

}  // namespace rawlab::npy
