// Central-difference oracle, independent of every analytic gradient path in
// the library. Kept in test code on purpose.
#pragma once

#include <cmath>
#include <functional>

#include "clipforge/image.hpp"

namespace test_support {

// d f / d x_k for every pixel component, (f(x+eps e_k) - f(x-eps e_k)) / 2eps.
inline clipforge::ImageTensor central_diff_pixels(
    const clipforge::ImageTensor& x, double eps,
    const std::function<double(const clipforge::ImageTensor&)>& f) {
  clipforge::ImageTensor grad(x.height(), x.width());
  for (std::size_t k = 0; k < x.size(); ++k) {
    clipforge::ImageTensor plus = x;
    clipforge::ImageTensor minus = x;
    plus.data()[k] += eps;
    minus.data()[k] -= eps;
    grad.data()[k] = (f(plus) - f(minus)) / (2.0 * eps);
  }
  return grad;
}

// L2 relative error between an analytic gradient and the oracle.
inline double rel_error(const clipforge::ImageTensor& analytic,
                        const clipforge::ImageTensor& oracle) {
  double diff2 = 0.0;
  double ref2 = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    const double d = analytic.data()[k] - oracle.data()[k];
    diff2 += d * d;
    ref2 += oracle.data()[k] * oracle.data()[k];
  }
  return std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-12);
}

}  // namespace test_support
