// SPDX-License-Identifier: Apache-2.0
#include "rawlab/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "rawlab/error.hpp"

namespace rawlab {

std::string Shape4::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

Tensor::Tensor(Shape4 shape, float fill) : shape_(shape) {
  if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0)
    fail(ErrorKind::Shape, "tensor dimensions must be >= 1, got " + shape.str());
  data_.assign(shape.count(), fill);
}

Tensor::Tensor(Shape4 shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0)
    fail(ErrorKind::Shape, "tensor dimensions must be >= 1, got " + shape.str());
  if (data_.size() != shape.count())
    fail(ErrorKind::Shape, "tensor data length does not match shape " + shape.str());
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()))
    fail(ErrorKind::Shape, "cannot compare " + a.shape().str() + " with " + b.shape().str());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  return m;
}

}  // namespace rawlab
