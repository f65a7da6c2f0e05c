#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ebmdiv/errors.hpp"
#include "ebmdiv/matrix.hpp"
#include "ebmdiv/mlp.hpp"
#include "ebmdiv/rng.hpp"

namespace ebmdiv {

enum class EnergyKind {
  e2_regression,          // (1/2)(g - y)^2
  e1_regression,          // |g - y|
  binary_classification,  // -y g, y in {-1,+1}
  implicit_regression,    // (1/2)(g1(x) - g2(y))^2
  joint_mlp,              // scalar net on [phi(x), psi(y)]
};

inline const char* to_string(EnergyKind k) {
  switch (k) {
    case EnergyKind::e2_regression: return "e2";
    case EnergyKind::e1_regression: return "e1";
    case EnergyKind::binary_classification: return "classification";
    case EnergyKind::implicit_regression: return "implicit";
    case EnergyKind::joint_mlp: return "joint_mlp";
  }
  return "?";
}

inline EnergyKind energy_kind_from_string(const std::string& s) {
  if (s == "e2") return EnergyKind::e2_regression;
  if (s == "e1") return EnergyKind::e1_regression;
  if (s == "classification") return EnergyKind::binary_classification;
  if (s == "implicit") return EnergyKind::implicit_regression;
  if (s == "joint_mlp") return EnergyKind::joint_mlp;
  throw ContractError("unknown energy kind: " + s);
}

// One model covers all energy kinds; unused parts stay empty.
//   e2/e1/classification: features + head_w
//   implicit:             features + head_w and features2 + head_w2 (on y)
//   joint_mlp:            features (x branch), y_embed, joint trunk
struct EbmModel {
  Mlp features;
  std::vector<double> head_w;
  Mlp features2;
  std::vector<double> head_w2;
  Mlp y_embed;
  Mlp joint;

  std::size_t feature_dim() const { return features.out_dim(); }
};

inline std::size_t param_count(const EbmModel& m) {
  return param_count(m.features) + m.head_w.size() + param_count(m.features2) +
         m.head_w2.size() + param_count(m.y_embed) + param_count(m.joint);
}

inline std::vector<double> flatten_params(const EbmModel& m) {
  std::vector<double> out(param_count(m));
  double* p = out.data();
  flatten_params(m.features, p);
  p += param_count(m.features);
  for (double v : m.head_w) *p++ = v;
  flatten_params(m.features2, p);
  p += param_count(m.features2);
  for (double v : m.head_w2) *p++ = v;
  flatten_params(m.y_embed, p);
  p += param_count(m.y_embed);
  flatten_params(m.joint, p);
  return out;
}

inline void unflatten_params(EbmModel& m, std::span<const double> in) {
  if (in.size() != param_count(m))
    throw DimensionError("unflatten_params: size mismatch");
  const double* p = in.data();
  unflatten_params(m.features, p);
  p += param_count(m.features);
  for (double& v : m.head_w) v = *p++;
  unflatten_params(m.features2, p);
  p += param_count(m.features2);
  for (double& v : m.head_w2) v = *p++;
  unflatten_params(m.y_embed, p);
  p += param_count(m.y_embed);
  unflatten_params(m.joint, p);
}

inline std::vector<double> make_head(std::size_t d, Rng& rng) {
  std::vector<double> w(d);
  const double s = std::sqrt(6.0 / static_cast<double>(d + 1));
  for (double& v : w) v = rng.uniform(-s, s);
  return w;
}

inline EbmModel make_linear_head_model(std::size_t in_dim, std::size_t hidden,
                                       std::size_t d, Rng& rng) {
  EbmModel m;
  m.features = make_feature_mlp(in_dim, hidden, d, rng);
  m.head_w = make_head(d, rng);
  return m;
}

inline EbmModel make_implicit_model(std::size_t in_dim, std::size_t hidden,
                                    std::size_t d1, std::size_t d2, Rng& rng) {
  EbmModel m;
  m.features = make_feature_mlp(in_dim, hidden, d1, rng);
  m.head_w = make_head(d1, rng);
  m.features2 = make_feature_mlp(1, hidden, d2, rng);
  m.head_w2 = make_head(d2, rng);
  return m;
}

// The experimental architecture: x branch 2 hidden layers -> D features,
// y branch one hidden layer, then four 10-unit hidden layers on the
// concatenation and a linear scalar output.
inline EbmModel make_joint_model(std::size_t in_dim, std::size_t hidden,
                                 std::size_t d, Rng& rng) {
  EbmModel m;
  m.features = make_feature_mlp(in_dim, hidden, d, rng);
  m.y_embed = make_mlp(1, {hidden}, {Activation::relu}, rng);
  m.joint = make_mlp(
      d + hidden, {hidden, hidden, hidden, hidden, 1},
      {Activation::relu, Activation::relu, Activation::relu, Activation::relu,
       Activation::identity},
      rng);
  return m;
}

inline EbmModel make_model_for(EnergyKind kind, std::size_t in_dim,
                               std::size_t hidden, std::size_t d, Rng& rng) {
  switch (kind) {
    case EnergyKind::e2_regression:
    case EnergyKind::e1_regression:
    case EnergyKind::binary_classification:
      return make_linear_head_model(in_dim, hidden, d, rng);
    case EnergyKind::implicit_regression:
      return make_implicit_model(in_dim, hidden, d, d, rng);
    case EnergyKind::joint_mlp:
      return make_joint_model(in_dim, hidden, d, rng);
  }
  throw ContractError("make_model_for: bad kind");
}

struct InnerValue {
  double g = 0.0;
  std::vector<double> features;
};

// g = w . phi(x), with the feature row exposed for diversity and bounds use.
inline InnerValue inner_value(const EbmModel& m, std::span<const double> x) {
  if (m.head_w.size() != m.features.out_dim())
    throw DimensionError("inner_value: head length != feature count");
  Matrix xin(1, x.size());
  for (std::size_t j = 0; j < x.size(); ++j) xin(0, j) = x[j];
  Matrix phi = mlp_forward(m.features, xin);
  InnerValue iv;
  iv.features.assign(phi.row(0).begin(), phi.row(0).end());
  iv.g = dot(iv.features, m.head_w);
  return iv;
}

inline double energy(EnergyKind kind, double g, double y) {
  switch (kind) {
    case EnergyKind::e2_regression:
      return 0.5 * (g - y) * (g - y);
    case EnergyKind::e1_regression:
      return std::fabs(g - y);
    case EnergyKind::binary_classification:
      if (y != 1.0 && y != -1.0)
        throw ContractError("classification energy: y must be -1 or +1");
      return -y * g;
    default:
      throw ContractError("energy(kind, g, y): kind needs a model");
  }
}

inline double energy_implicit(std::span<const double> g1,
                              std::span<const double> g2) {
  require_shape(g1.size() == g2.size(), "implicit energy branch dims");
  double s = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    const double d = g1[i] - g2[i];
    s += d * d;
  }
  return 0.5 * s;
}

namespace detail {

// sign with the E1 subgradient convention: 0 at 0
inline double sgn0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline Matrix one_row(std::span<const double> x) {
  Matrix m(1, x.size());
  for (std::size_t j = 0; j < x.size(); ++j) m(0, j) = x[j];
  return m;
}

inline Matrix concat_cols(const Matrix& a, const Matrix& b) {
  require_shape(a.rows() == b.rows(), "concat rows");
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* oi = out.data() + i * out.cols();
    const double* ai = a.data() + i * a.cols();
    const double* bi = b.data() + i * b.cols();
    for (std::size_t j = 0; j < a.cols(); ++j) oi[j] = ai[j];
    for (std::size_t j = 0; j < b.cols(); ++j) oi[a.cols() + j] = bi[j];
  }
  return out;
}

}  // namespace detail

// Full-model energy value at one (x, y).
inline double energy_value(EnergyKind kind, const EbmModel& m,
                           std::span<const double> x, double y) {
  switch (kind) {
    case EnergyKind::e2_regression:
    case EnergyKind::e1_regression:
    case EnergyKind::binary_classification:
      return energy(kind, inner_value(m, x).g, y);
    case EnergyKind::implicit_regression: {
      const InnerValue v1 = inner_value(m, x);
      Matrix yin(1, 1);
      yin(0, 0) = y;
      Matrix phi2 = mlp_forward(m.features2, yin);
      const double g2 = dot(phi2.row(0), std::span<const double>(m.head_w2));
      const double d = v1.g - g2;
      return 0.5 * d * d;
    }
    case EnergyKind::joint_mlp: {
      Matrix phi = mlp_forward(m.features, detail::one_row(x));
      Matrix yin(1, 1);
      yin(0, 0) = y;
      Matrix psi = mlp_forward(m.y_embed, yin);
      Matrix z = detail::concat_cols(phi, psi);
      return mlp_forward(m.joint, z)(0, 0);
    }
  }
  throw ContractError("energy_value: bad kind");
}

struct EnergyGrads {
  double value = 0.0;
  std::vector<double> wrt_params;  // flattened model order
  double wrt_y = 0.0;
};

// Exact chain-rule gradients of the energy w.r.t. every model parameter
// and w.r.t. y.
inline EnergyGrads energy_grads(EnergyKind kind, const EbmModel& m,
                                std::span<const double> x, double y) {
  EnergyGrads out;
  out.wrt_params.assign(param_count(m), 0.0);
  double* slot = out.wrt_params.data();
  const std::size_t n_feat = param_count(m.features);
  const std::size_t n_feat2 = param_count(m.features2);
  const std::size_t n_yemb = param_count(m.y_embed);

  switch (kind) {
    case EnergyKind::e2_regression:
    case EnergyKind::e1_regression:
    case EnergyKind::binary_classification: {
      if (m.head_w.size() != m.features.out_dim())
        throw DimensionError("energy_grads: head length != feature count");
      MlpCache cache;
      Matrix phi = mlp_forward(m.features, detail::one_row(x), &cache);
      const double g = dot(phi.row(0), std::span<const double>(m.head_w));
      double dEdg = 0.0;
      if (kind == EnergyKind::e2_regression) {
        out.value = 0.5 * (g - y) * (g - y);
        dEdg = g - y;
        out.wrt_y = y - g;
      } else if (kind == EnergyKind::e1_regression) {
        out.value = std::fabs(g - y);
        dEdg = detail::sgn0(g - y);
        out.wrt_y = -dEdg;
      } else {
        out.value = energy(kind, g, y);
        dEdg = -y;
        out.wrt_y = -g;
      }
      Matrix up(1, phi.cols());
      for (std::size_t j = 0; j < phi.cols(); ++j)
        up(0, j) = dEdg * m.head_w[j];
      MlpGrads fg = mlp_backward(m.features, cache, up);
      flatten_grads(fg, slot);
      for (std::size_t j = 0; j < m.head_w.size(); ++j)
        slot[n_feat + j] = dEdg * phi(0, j);
      return out;
    }
    case EnergyKind::implicit_regression: {
      MlpCache c1, c2;
      Matrix phi1 = mlp_forward(m.features, detail::one_row(x), &c1);
      Matrix yin(1, 1);
      yin(0, 0) = y;
      Matrix phi2 = mlp_forward(m.features2, yin, &c2);
      const double g1 = dot(phi1.row(0), std::span<const double>(m.head_w));
      const double g2 = dot(phi2.row(0), std::span<const double>(m.head_w2));
      const double diff = g1 - g2;
      out.value = 0.5 * diff * diff;
      Matrix up1(1, phi1.cols()), up2(1, phi2.cols());
      for (std::size_t j = 0; j < phi1.cols(); ++j)
        up1(0, j) = diff * m.head_w[j];
      for (std::size_t j = 0; j < phi2.cols(); ++j)
        up2(0, j) = -diff * m.head_w2[j];
      MlpGrads f1 = mlp_backward(m.features, c1, up1);
      MlpGrads f2 = mlp_backward(m.features2, c2, up2);
      flatten_grads(f1, slot);
      for (std::size_t j = 0; j < m.head_w.size(); ++j)
        slot[n_feat + j] = diff * phi1(0, j);
      flatten_grads(f2, slot + n_feat + m.head_w.size());
      for (std::size_t j = 0; j < m.head_w2.size(); ++j)
        slot[n_feat + m.head_w.size() + n_feat2 + j] = -diff * phi2(0, j);
      out.wrt_y = f2.ginput(0, 0);
      return out;
    }
    case EnergyKind::joint_mlp: {
      MlpCache cx, cy, cj;
      Matrix phi = mlp_forward(m.features, detail::one_row(x), &cx);
      Matrix yin(1, 1);
      yin(0, 0) = y;
      Matrix psi = mlp_forward(m.y_embed, yin, &cy);
      Matrix z = detail::concat_cols(phi, psi);
      Matrix e = mlp_forward(m.joint, z, &cj);
      out.value = e(0, 0);
      Matrix up(1, 1);
      up(0, 0) = 1.0;
      MlpGrads jg = mlp_backward(m.joint, cj, up);
      Matrix up_phi(1, phi.cols()), up_psi(1, psi.cols());
      for (std::size_t j = 0; j < phi.cols(); ++j) up_phi(0, j) = jg.ginput(0, j);
      for (std::size_t j = 0; j < psi.cols(); ++j)
        up_psi(0, j) = jg.ginput(0, phi.cols() + j);
      MlpGrads fg = mlp_backward(m.features, cx, up_phi);
      MlpGrads yg = mlp_backward(m.y_embed, cy, up_psi);
      flatten_grads(fg, slot);
      const std::size_t yoff =
          n_feat + m.head_w.size() + n_feat2 + m.head_w2.size();
      flatten_grads(yg, slot + yoff);
      flatten_grads(jg, slot + yoff + n_yemb);
      out.wrt_y = yg.ginput(0, 0);
      return out;
    }
  }
  throw ContractError("energy_grads: bad kind");
}

// Energies of one x against many candidate y values. The x branch runs
// once; y-side work is batched.
inline std::vector<double> energy_grid_values(EnergyKind kind,
                                              const EbmModel& m,
                                              std::span<const double> x,
                                              std::span<const double> ys) {
  std::vector<double> out(ys.size());
  switch (kind) {
    case EnergyKind::e2_regression:
    case EnergyKind::e1_regression:
    case EnergyKind::binary_classification: {
      const double g = inner_value(m, x).g;
      for (std::size_t k = 0; k < ys.size(); ++k)
        out[k] = energy(kind, g, ys[k]);
      return out;
    }
    case EnergyKind::implicit_regression: {
      const double g1 = inner_value(m, x).g;
      Matrix yin(ys.size(), 1);
      for (std::size_t k = 0; k < ys.size(); ++k) yin(k, 0) = ys[k];
      Matrix phi2 = mlp_forward(m.features2, yin);
      for (std::size_t k = 0; k < ys.size(); ++k) {
        const double g2 =
            dot(phi2.row(k), std::span<const double>(m.head_w2));
        const double d = g1 - g2;
        out[k] = 0.5 * d * d;
      }
      return out;
    }
    case EnergyKind::joint_mlp: {
      Matrix phi = mlp_forward(m.features, detail::one_row(x));
      Matrix yin(ys.size(), 1);
      for (std::size_t k = 0; k < ys.size(); ++k) yin(k, 0) = ys[k];
      Matrix psi = mlp_forward(m.y_embed, yin);
      Matrix z(ys.size(), phi.cols() + psi.cols());
      for (std::size_t k = 0; k < ys.size(); ++k) {
        double* zk = z.data() + k * z.cols();
        for (std::size_t j = 0; j < phi.cols(); ++j) zk[j] = phi(0, j);
        const double* pk = psi.data() + k * psi.cols();
        for (std::size_t j = 0; j < psi.cols(); ++j) zk[phi.cols() + j] = pk[j];
      }
      Matrix e = mlp_forward(m.joint, z);
      for (std::size_t k = 0; k < ys.size(); ++k) out[k] = e(k, 0);
      return out;
    }
  }
  throw ContractError("energy_grid_values: bad kind");
}

// Per-pair energies for a batch of (x_i, y_i).
inline std::vector<double> energy_batch_values(EnergyKind kind,
                                               const EbmModel& m,
                                               const Matrix& xs,
                                               std::span<const double> ys) {
  require_shape(xs.rows() == ys.size(), "energy_batch rows");
  std::vector<double> out(ys.size());
  switch (kind) {
    case EnergyKind::e2_regression:
    case EnergyKind::e1_regression:
    case EnergyKind::binary_classification: {
      Matrix phi = mlp_forward(m.features, xs);
      for (std::size_t i = 0; i < ys.size(); ++i)
        out[i] = energy(kind, dot(phi.row(i), std::span<const double>(m.head_w)),
                        ys[i]);
      return out;
    }
    case EnergyKind::implicit_regression: {
      Matrix phi1 = mlp_forward(m.features, xs);
      Matrix yin(ys.size(), 1);
      for (std::size_t i = 0; i < ys.size(); ++i) yin(i, 0) = ys[i];
      Matrix phi2 = mlp_forward(m.features2, yin);
      for (std::size_t i = 0; i < ys.size(); ++i) {
        const double g1 = dot(phi1.row(i), std::span<const double>(m.head_w));
        const double g2 = dot(phi2.row(i), std::span<const double>(m.head_w2));
        const double d = g1 - g2;
        out[i] = 0.5 * d * d;
      }
      return out;
    }
    case EnergyKind::joint_mlp: {
      Matrix phi = mlp_forward(m.features, xs);
      Matrix yin(ys.size(), 1);
      for (std::size_t i = 0; i < ys.size(); ++i) yin(i, 0) = ys[i];
      Matrix psi = mlp_forward(m.y_embed, yin);
      Matrix z = detail::concat_cols(phi, psi);
      Matrix e = mlp_forward(m.joint, z);
      for (std::size_t i = 0; i < ys.size(); ++i) out[i] = e(i, 0);
      return out;
    }
  }
  throw ContractError("energy_batch_values: bad kind");
}

// Inference y* = argmin_y E: coarse grid scan (ties toward smaller y)
// followed by gradient descent with backtracking from the best grid point.
inline double infer_y(const EbmModel& m, std::span<const double> x,
                      EnergyKind kind, double y_lo, double y_hi,
                      std::size_t grid_n, std::size_t refine_steps) {
  if (!(y_lo < y_hi)) throw ContractError("infer_y: empty range");
  if (grid_n < 2) throw ContractError("infer_y: grid_n must be >= 2");
  std::vector<double> grid(grid_n);
  for (std::size_t k = 0; k < grid_n; ++k)
    grid[k] = y_lo + (y_hi - y_lo) * static_cast<double>(k) /
                         static_cast<double>(grid_n - 1);
  std::vector<double> e = energy_grid_values(kind, m, x, grid);
  double best_y = grid[0], best_e = e[0];
  for (std::size_t k = 0; k < grid_n; ++k) {
    if (!std::isfinite(e[k]))
      throw NumericError("infer_y: non-finite energy on grid");
    if (e[k] < best_e) {  // strict: ties keep the smaller y
      best_e = e[k];
      best_y = grid[k];
    }
  }
  const double cell = (y_hi - y_lo) / static_cast<double>(grid_n - 1);
  double y = best_y, ey = best_e;
  double step = 0.5 * cell;
  for (std::size_t r = 0; r < refine_steps; ++r) {
    const double dy = energy_grads(kind, m, x, y).wrt_y;
    if (dy == 0.0) break;
    double cand = y - step * detail::sgn0(dy);
    if (cand < y_lo) cand = y_lo;
    if (cand > y_hi) cand = y_hi;
    const double ec = energy_value(kind, m, x, cand);
    if (ec < ey) {
      y = cand;
      ey = ec;
      step *= 1.5;
    } else {
      step *= 0.5;
    }
  }
  return y;
}

}  // namespace ebmdiv
