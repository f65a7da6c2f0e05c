#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "ebmdiv/errors.hpp"

namespace ebmdiv {

// Central-difference gradient oracle: (f(x + h e_i) - f(x - h e_i)) / 2h.
// f must evaluate finite in the h-neighborhood of point.
template <class F>
std::vector<double> finite_diff_grad(F&& f, std::span<const double> point,
                                     double h = 1e-5) {
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = f(std::span<const double>(x));
    x[i] = saved - h;
    const double fm = f(std::span<const double>(x));
    x[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_grad: non-finite evaluation");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace ebmdiv
