#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ebmdiv/energy.hpp"
#include "ebmdiv/errors.hpp"
#include "ebmdiv/matrix.hpp"

namespace ebmdiv {

struct GridSpec {
  double y_lo = -1.0;
  double y_hi = 1.0;
  std::size_t n_points = 1024;
};

// Default evaluation grid: data range padded by pad_sigmas standard
// deviations of the targets.
inline GridSpec make_grid_spec(std::span<const double> y_data,
                               double pad_sigmas = 3.0,
                               std::size_t n_points = 1024) {
  if (y_data.empty()) throw ContractError("make_grid_spec: empty data");
  double lo = y_data[0], hi = y_data[0], sum = 0.0;
  for (double v : y_data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  const double mean = sum / static_cast<double>(y_data.size());
  double var = 0.0;
  for (double v : y_data) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(y_data.size()));
  return GridSpec{lo - pad_sigmas * sd, hi + pad_sigmas * sd, n_points};
}

// Discretized conditional density: cell masses normalized to sum to one;
// the density form is mass / dy.
struct DensityGrid {
  double y_lo = 0.0, y_hi = 0.0;
  std::size_t n_points = 0;
  double dy = 0.0;
  std::vector<double> log_unnormalized;  // -E per grid point
  std::vector<double> mass;

  double point(std::size_t i) const {
    return y_lo + dy * static_cast<double>(i);
  }
};

namespace detail {

inline DensityGrid normalize_grid(const GridSpec& spec,
                                  std::vector<double> log_unnorm) {
  if (spec.n_points < 2) throw ContractError("density grid: n_points >= 2");
  if (!(spec.y_lo < spec.y_hi)) throw ContractError("density grid: bad range");
  DensityGrid g;
  g.y_lo = spec.y_lo;
  g.y_hi = spec.y_hi;
  g.n_points = spec.n_points;
  g.dy = (spec.y_hi - spec.y_lo) / static_cast<double>(spec.n_points - 1);
  g.log_unnormalized = std::move(log_unnorm);
  double mx = -1e300;
  for (double v : g.log_unnormalized) {
    if (!std::isfinite(v)) throw NumericError("density grid: non-finite energy");
    mx = std::max(mx, v);
  }
  double z = 0.0;
  for (double v : g.log_unnormalized) z += std::exp(v - mx);
  g.mass.resize(g.n_points);
  for (std::size_t i = 0; i < g.n_points; ++i)
    g.mass[i] = std::exp(g.log_unnormalized[i] - mx) / z;
  // kill residual rounding so the masses sum to 1 exactly as possible
  double s = 0.0;
  for (double v : g.mass) s += v;
  for (double& v : g.mass) v /= s;
  return g;
}

}  // namespace detail

// p(y | x) on the grid, proportional to exp(-E(x, y)).
inline DensityGrid model_density(const EbmModel& model, EnergyKind kind,
                                 std::span<const double> x,
                                 const GridSpec& spec) {
  if (spec.n_points < 2) throw ContractError("model_density: n_points >= 2");
  std::vector<double> ys(spec.n_points);
  const double dy =
      (spec.y_hi - spec.y_lo) / static_cast<double>(spec.n_points - 1);
  for (std::size_t i = 0; i < spec.n_points; ++i)
    ys[i] = spec.y_lo + dy * static_cast<double>(i);
  std::vector<double> e = energy_grid_values(kind, model, x, ys);
  for (double& v : e) v = -v;
  return detail::normalize_grid(spec, std::move(e));
}

// Discretization of a known pdf onto the same grid/mass convention.
template <class Pdf>
DensityGrid density_from_pdf(Pdf&& pdf, const GridSpec& spec) {
  std::vector<double> logp(spec.n_points);
  const double dy =
      (spec.y_hi - spec.y_lo) / static_cast<double>(spec.n_points - 1);
  for (std::size_t i = 0; i < spec.n_points; ++i) {
    const double p = pdf(spec.y_lo + dy * static_cast<double>(i));
    logp[i] = p > 0.0 ? std::log(p) : -745.0;  // smallest normal double logs
  }
  return detail::normalize_grid(spec, std::move(logp));
}

// KL(p_true || p_model) over cells with positive true mass; model mass
// floored at 1e-12.
inline double kl_divergence_grid(const DensityGrid& p_true,
                                 const DensityGrid& p_model) {
  if (p_true.n_points != p_model.n_points || p_true.y_lo != p_model.y_lo ||
      p_true.y_hi != p_model.y_hi)
    throw ContractError("kl_divergence_grid: grids differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < p_true.n_points; ++i) {
    const double pt = p_true.mass[i];
    if (pt <= 0.0) continue;
    const double pm = std::max(p_model.mass[i], 1e-12);
    kl += pt * std::log(pt / pm);
  }
  return kl;
}

struct NllResult {
  double nll = 0.0;       // mean -log mass at the targets
  std::size_t used = 0;
  std::size_t excluded = 0;  // targets outside the grid
};

// Mean negative log-likelihood in mass form; the mass at y interpolates
// linearly between adjacent cells. Off-grid targets are excluded and
// counted.
inline NllResult nll_grid(const EbmModel& model, EnergyKind kind,
                          const Matrix& xs, std::span<const double> ys,
                          const GridSpec& spec) {
  require_shape(xs.rows() == ys.size(), "nll_grid rows");
  if (ys.empty()) throw ContractError("nll_grid: empty test set");
  NllResult res;
  double sum = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double y = ys[i];
    if (y < spec.y_lo || y > spec.y_hi) {
      ++res.excluded;
      continue;
    }
    DensityGrid g = model_density(model, kind, xs.row(i), spec);
    const double t = (y - g.y_lo) / g.dy;
    std::size_t i0 = static_cast<std::size_t>(t);
    if (i0 >= g.n_points - 1) i0 = g.n_points - 2;
    const double f = t - static_cast<double>(i0);
    const double p = g.mass[i0] * (1.0 - f) + g.mass[i0 + 1] * f;
    sum += -std::log(std::max(p, 1e-300));
    ++res.used;
  }
  if (res.used > 0) res.nll = sum / static_cast<double>(res.used);
  return res;
}

}  // namespace ebmdiv
