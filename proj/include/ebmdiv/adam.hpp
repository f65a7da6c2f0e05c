#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ebmdiv/errors.hpp"

namespace ebmdiv {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::vector<double> m, v;  // first/second moment accumulators
  std::int64_t t = 0;

  explicit AdamState(std::size_t n, AdamConfig c = {})
      : cfg(c), m(n, 0.0), v(n, 0.0) {}
};

// Bias-corrected Adam update, in place on params.
inline void adam_step(AdamState& st, std::span<double> params,
                      std::span<const double> grads) {
  if (params.size() != st.m.size() || grads.size() != st.m.size())
    throw DimensionError("adam_step: size mismatch");
  for (double g : grads)
    if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
  st.t += 1;
  const double c1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = st.cfg.beta1 * st.m[i] + (1.0 - st.cfg.beta1) * grads[i];
    st.v[i] = st.cfg.beta2 * st.v[i] + (1.0 - st.cfg.beta2) * grads[i] * grads[i];
    const double mhat = st.m[i] / c1;
    const double vhat = st.v[i] / c2;
    params[i] -= st.cfg.lr * mhat / (std::sqrt(vhat) + st.cfg.eps);
  }
}

}  // namespace ebmdiv
