// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace rawlab::cli {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,  // unexpected failure
  kExitUsage = 2,     // bad arguments, invalid input files or specs
};

int run(int argc, const char* const* argv);
/// Convenience overload; args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace rawlab::cli
