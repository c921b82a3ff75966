// SPDX-License-Identifier: Apache-2.0
#include "rawlab/error.hpp"

namespace rawlab {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension error";
    case ErrorKind::Meta: return "meta error";
    case ErrorKind::Argument: return "argument error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Io: return "io error";
    case ErrorKind::Validation: return "validation error";
  }
  return "error";
}

}  // namespace rawlab
