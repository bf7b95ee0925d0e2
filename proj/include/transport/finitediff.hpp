#pragma once

#include "transport/linalg.hpp"

namespace transport {

// Central differences, O(h^2); steps scale with the coordinate magnitude.
template <typename F>
Vector finite_diff_grad(F&& f, const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  Vector xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    double step = h * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + step;
    double fp = f(xp);
    xp[j] = x[j] - step;
    double fm = f(xp);
    xp[j] = x[j];
    g[j] = (fp - fm) / (2.0 * step);
  }
  return g;
}

// Jacobian of a vector-valued map by central differences, one column per input
// coordinate.
template <typename F>
Matrix finite_diff_jacobian(F&& f, const Vector& x, double h = 1e-5) {
  Vector f0 = f(x);
  Matrix J(f0.size(), x.size());
  Vector xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    double step = h * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + step;
    Vector fp = f(xp);
    xp[j] = x[j] - step;
    Vector fm = f(xp);
    xp[j] = x[j];
    J.col(j) = (fp - fm) / (2.0 * step);
  }
  return J;
}

}  // namespace transport
