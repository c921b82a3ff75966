// SPDX-License-Identifier: Apache-2.0
#include "rawlab/parallel.hpp"

#include <omp.h>

#include <algorithm>

namespace rawlab {

void set_num_threads(int n) { omp_set_num_threads(std::max(1, n)); }

int num_threads() { return omp_get_max_threads(); }

}  // namespace rawlab
