// SPDX-License-Identifier: Apache-2.0
#include "rawlab/npy.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstring>
#include <functional>
#include <numeric>
#include <regex>

#include "rawlab/error.hpp"
#include "rawlab/io.hpp"

namespace rawlab::npy {
namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

template <typename T>
T load_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

std::size_t element_size(DType t) {
  switch (t) {
    case DType::F4: return 4;
    case DType::F8: return 8;
    case DType::U1: return 1;
    case DType::U2: return 2;
  }
  return 0;
}

DType parse_descr(const std::string& descr) {
  if (descr == "<f4") return DType::F4;
  if (descr == "<f8") return DType::F8;
  if (descr == "|u1" || descr == "<u1") return DType::U1;
  if (descr == "<u2") return DType::U2;
  fail(ErrorKind::Format, "unsupported npy dtype '" + descr + "'");
}

std::vector<std::size_t> parse_shape(const std::string& text) {
  std::vector<std::size_t> shape;
  std::size_t i = 0;
  while (i < text.size()) {
    if (std::isdigit(static_cast<unsigned char>(text[i]))) {
      std::size_t j = i;
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      shape.push_back(std::stoull(text.substr(i, j - i)));
      i = j;
    } else if (text[i] == ',' || text[i] == ' ' || text[i] == 'L') {
      ++i;
    } else {
      fail(ErrorKind::Format, "bad npy shape '" + text + "'");
    }
  }
  return shape;
}

}  // namespace

std::size_t Array::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Array parse(const std::string& bytes) {
  if (bytes.size() < 10 || bytes.compare(0, kMagicLen, kMagic, kMagicLen) != 0)
    fail(ErrorKind::Format, "not an npy file (bad magic)");
  const int major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = load_le<std::uint16_t>(bytes.data() + 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) fail(ErrorKind::Format, "truncated npy header");
    header_len = load_le<std::uint32_t>(bytes.data() + 8);
    offset = 12;
  } else {
    fail(ErrorKind::Format, "unsupported npy version " + std::to_string(major));
  }
  if (offset + header_len > bytes.size()) fail(ErrorKind::Format, "truncated npy header");
  const std::string header = bytes.substr(offset, header_len);

  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex fortran_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  std::smatch m;
  if (!std::regex_search(header, m, descr_re)) fail(ErrorKind::Format, "npy header lacks descr");
  const DType dtype = parse_descr(m[1]);
  if (!std::regex_search(header, m, fortran_re))
    fail(ErrorKind::Format, "npy header lacks fortran_order");
  if (m[1] == "True") fail(ErrorKind::Format, "fortran-ordered npy arrays are not supported");
  if (!std::regex_search(header, m, shape_re)) fail(ErrorKind::Format, "npy header lacks shape");

  Array out;
  out.shape = parse_shape(m[1]);
  out.source_dtype = dtype;
  const std::size_t count = out.size();
  const std::size_t esize = element_size(dtype);
  const std::size_t data_off = offset + header_len;
  if (bytes.size() - data_off < count * esize)
    fail(ErrorKind::Format, "npy payload shorter than its shape implies");

  out.data.resize(count);
  const char* p = bytes.data() + data_off;
  for (std::size_t i = 0; i < count; ++i, p += esize) {
    switch (dtype) {
      case DType::F4: out.data[i] = load_le<float>(p); break;
      case DType::F8: out.data[i] = static_cast<float>(load_le<double>(p)); break;
      case DType::U1: out.data[i] = static_cast<float>(load_le<std::uint8_t>(p)); break;
      case DType::U2: out.data[i] = static_cast<float>(load_le<std::uint16_t>(p)); break;
    }
  }
  return out;
}

Array read(const std::filesystem::path& path) {
  try {
    return parse(io::read_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Io) throw;
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

std::string serialize(const std::vector<std::size_t>& shape, const std::vector<float>& data) {
  const std::size_t count =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  if (count != data.size()) fail(ErrorKind::Shape, "npy shape does not match data length");

  std::string dims;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) dims += ", ";
    dims += std::to_string(shape[i]);
  }
  if (shape.size() == 1) dims += ",";
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + dims + "), }";
  const std::size_t unpadded = kMagicLen + 4 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::string out(kMagic, kMagicLen);
  out.push_back('\x01');
  out.push_back('\x00');
  const auto hlen = static_cast<std::uint16_t>(header.size());
  out.push_back(static_cast<char>(hlen & 0xff));
  out.push_back(static_cast<char>(hlen >> 8));
  out += header;

  const std::size_t payload = out.size();
  out.resize(payload + data.size() * 4);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(data[i]);
    for (int b = 0; b < 4; ++b)
      out[payload + 4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  return out;
}

void write(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
           const std::vector<float>& data) {
  io::write_file_atomic(path, serialize(shape, data));
}

}  // namespace rawlab::npy
