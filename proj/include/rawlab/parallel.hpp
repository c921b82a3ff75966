// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace rawlab {

/// Number of worker threads used by kernels and per-file loops.
/// Results never depend on this value.
void set_num_threads(int n);
int num_threads();

}  // namespace rawlab
