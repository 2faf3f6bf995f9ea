#pragma once

#include "csdip/tensor.hpp"

namespace csdip {

/// Per-pixel mean squared error ||estimate - truth||^2 / n.
inline double mse(const Tensor& estimate, const Tensor& truth) {
  estimate.require_same_shape(truth, "mse");
  if (truth.empty()) throw ShapeError("mse: empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = estimate[i] - truth[i];
    s += d * d;
  }
  return s / static_cast<double>(truth.size());
}

}  // namespace csdip
