// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace rawlab {

enum class ErrorKind {
  Dimension,   // odd or otherwise unusable image dimensions
  Meta,        // invalid sensor metadata
  Argument,    // bad parameter value
  Shape,       // tensor/array shape mismatch
  Format,      // malformed file contents
  Io,          // file system failure
  Validation,  // model spec or manifest rejected
};

const char* to_string(ErrorKind kind) noexcept;

/// All recoverable failures in the library are reported through this type.
/// The CLI maps it to exit code 2; anything else escaping is an internal error.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace rawlab
