#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "igs/core.hpp"

namespace igs::testing {

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||, floor).
inline double rel_error(const VecX& a, const VecX& b, double floor = 1e-12) {
  const double denom = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / denom;
}

/// Central differences of f around the values referenced by `params`.
inline VecX central_diff(const std::function<double()>& f, const std::vector<double*>& params, double h) {
  VecX g(static_cast<Eigen::Index>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double x0 = *params[i];
    *params[i] = x0 + h;
    const double fp = f();
    *params[i] = x0 - h;
    const double fm = f();
    *params[i] = x0;
    g[static_cast<Eigen::Index>(i)] = (fp - fm) / (2 * h);
  }
  return g;
}

inline Vec4 random_unit_quaternion(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec4 q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized();
}

}  // namespace igs::testing
