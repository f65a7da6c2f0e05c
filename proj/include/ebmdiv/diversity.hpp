#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ebmdiv/errors.hpp"
#include "ebmdiv/matrix.hpp"

namespace ebmdiv {

// A batch of feature activations, one row per input, D columns.
using FeatureBatch = Matrix;

// Pairwise spread of one feature row: (1/2) sum_{i != j} (phi_i - phi_j)^2,
// i.e. the sum over unordered pairs. Zero for a single feature.
inline double diversity_statistic(std::span<const double> row) {
  const std::size_t d = row.size();
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      const double diff = row[i] - row[j];
      s += diff * diff;
    }
  return s;
}

struct DiversityEstimate {
  double theta = 0.0;    // diversity level, statistic >= theta^2 w.p. tau
  double tau = 1.0;      // coverage probability the estimate targets
  double a_bound = 0.0;  // empirical max L2 feature norm
  std::size_t d = 0;     // feature count
};

// theta^2 is the lower-interpolation empirical (1-tau)-quantile of the
// per-row statistic: the largest observed value v such that
// fraction{statistic < v} <= 1-tau. This makes the in-sample coverage
// fraction{statistic >= theta^2} >= tau exact.
inline DiversityEstimate estimate_theta_tau(const FeatureBatch& batch,
                                            double tau) {
  if (batch.rows() == 0) throw ContractError("estimate_theta_tau: empty batch");
  if (!(tau > 0.0 && tau <= 1.0))
    throw ContractError("estimate_theta_tau: tau must be in (0, 1]");
  const std::size_t n = batch.rows();
  std::vector<double> stats(n);
  double a2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = batch.row(i);
    stats[i] = diversity_statistic(row);
    double norm2 = 0.0;
    for (double v : row) norm2 += v * v;
    a2 = std::max(a2, norm2);
  }
  std::sort(stats.begin(), stats.end());
  const double allowed = (1.0 - tau) * static_cast<double>(n);
  double theta2 = stats.front();
  for (std::size_t k = n; k-- > 0;) {
    // count of entries strictly below stats[k] = index of first occurrence
    const std::size_t below =
        std::lower_bound(stats.begin(), stats.end(), stats[k]) - stats.begin();
    if (static_cast<double>(below) <= allowed) {
      theta2 = stats[k];
      break;
    }
  }
  DiversityEstimate est;
  // round theta down until theta^2 <= the selected quantile value, so the
  // coverage guarantee survives the sqrt/square round trip
  est.theta = std::sqrt(theta2);
  while (est.theta * est.theta > theta2)
    est.theta = std::nextafter(est.theta, 0.0);
  est.tau = tau;
  est.a_bound = std::sqrt(a2);
  while (est.a_bound * est.a_bound < a2)
    est.a_bound = std::nextafter(est.a_bound, 1e300);
  est.d = batch.cols();
  return est;
}

// Ordered-pair penalty sum_x sum_{i != j} (phi_i(x) - phi_j(x))^2, each
// unordered pair counted twice; equals 2x the statistic summed over rows.
inline double diversity_penalty(const FeatureBatch& batch) {
  if (batch.rows() == 0) throw ContractError("diversity_penalty: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < batch.rows(); ++i)
    s += 2.0 * diversity_statistic(batch.row(i));
  return s;
}

// d penalty / d phi_i(x) = 4 (D phi_i(x) - sum_j phi_j(x))
inline Matrix diversity_penalty_grad(const FeatureBatch& batch) {
  if (batch.rows() == 0)
    throw ContractError("diversity_penalty_grad: empty batch");
  const std::size_t n = batch.rows(), d = batch.cols();
  Matrix g(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (double v : batch.row(i)) sum += v;
    for (std::size_t j = 0; j < d; ++j)
      g(i, j) = 4.0 * (static_cast<double>(d) * batch(i, j) - sum);
  }
  return g;
}

}  // namespace ebmdiv
