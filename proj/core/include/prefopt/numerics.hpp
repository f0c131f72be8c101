#pragma once

#include <cmath>

namespace prefopt {

/// log(1 + exp(x)) without overflow for large |x|.
inline double softplus(double x) noexcept {
  if (x > 0.0) {
    return x + std::log1p(std::exp(-x));
  }
  return std::log1p(std::exp(x));
}

/// Logistic function, evaluated on the branch that never overflows.
inline double sigmoid(double x) noexcept {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// -log(sigmoid(u)), the shared kernel of every Bradley-Terry style loss.
inline double sigmoid_log_loss(double u) noexcept { return softplus(-u); }

}  // namespace prefopt
