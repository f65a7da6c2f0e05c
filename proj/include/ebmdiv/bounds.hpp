#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ebmdiv/diversity.hpp"
#include "ebmdiv/energy.hpp"
#include "ebmdiv/errors.hpp"
#include "ebmdiv/matrix.hpp"
#include "ebmdiv/rng.hpp"

namespace ebmdiv {

enum class RademacherMethod { finite_class_mc, massart_upper };

struct RademacherEstimate {
  double value = 0.0;
  std::size_t n_sigma_draws = 0;
  RademacherMethod method = RademacherMethod::finite_class_mc;
  double mc_stderr = 0.0;  // zero for the Massart bound
};

// Empirical Rademacher complexity of the finite class spanned by the
// columns of `values` (m samples x k functions), optionally closed under
// negation. finite_class_mc averages sup_f (1/m) sum_i sigma_i f(x_i) over
// sigma draws; massart_upper is max_f ||f||_2 sqrt(2 log N) / m.
inline RademacherEstimate estimate_rademacher(const Matrix& values,
                                              std::size_t n_draws,
                                              RademacherMethod method, Rng& rng,
                                              bool include_negations = true) {
  const std::size_t m = values.rows(), k = values.cols();
  if (m == 0 || k == 0) throw ContractError("estimate_rademacher: empty input");
  RademacherEstimate est;
  est.method = method;
  if (method == RademacherMethod::massart_upper) {
    double max_norm = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double n2 = 0.0;
      for (std::size_t i = 0; i < m; ++i) n2 += values(i, j) * values(i, j);
      max_norm = std::max(max_norm, std::sqrt(n2));
    }
    const double n_class = static_cast<double>(include_negations ? 2 * k : k);
    est.value = max_norm * std::sqrt(2.0 * std::log(n_class)) /
                static_cast<double>(m);
    return est;
  }
  if (n_draws == 0) throw ContractError("estimate_rademacher: n_draws >= 1");
  est.n_sigma_draws = n_draws;
  std::vector<double> sigma(m);
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t t = 0; t < n_draws; ++t) {
    for (std::size_t i = 0; i < m; ++i)
      sigma[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    double sup = -1e300;
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += sigma[i] * values(i, j);
      s /= static_cast<double>(m);
      if (include_negations) s = std::fabs(s);
      sup = std::max(sup, s);
    }
    sum += sup;
    sum2 += sup * sup;
  }
  est.value = sum / static_cast<double>(n_draws);
  const double var =
      std::max(0.0, sum2 / static_cast<double>(n_draws) - est.value * est.value);
  est.mc_stderr = std::sqrt(var / static_cast<double>(n_draws));
  return est;
}

enum class TheoremId { t1, t2, t3, t4 };

inline const char* to_string(TheoremId t) {
  switch (t) {
    case TheoremId::t1: return "t1";
    case TheoremId::t2: return "t2";
    case TheoremId::t3: return "t3";
    case TheoremId::t4: return "t4";
  }
  return "?";
}

inline TheoremId theorem_from_string(const std::string& s) {
  if (s == "t1") return TheoremId::t1;
  if (s == "t2") return TheoremId::t2;
  if (s == "t3") return TheoremId::t3;
  if (s == "t4") return TheoremId::t4;
  throw ContractError("unknown theorem: " + s);
}

// Everything the theorem right-hand sides consume. Branch-2 fields apply
// only to the implicit-regression bound.
struct BoundInputs {
  std::size_t d = 0;
  double a_bound = 0.0;
  double theta = 0.0;
  double tau = 1.0;
  double w_inf = 0.0;
  double b_bound = 0.0;
  std::size_t m = 1;
  double delta = 0.05;
  double rad_f = 0.0;

  bool has_branch2 = false;
  std::size_t d2 = 0;
  double a2_bound = 0.0;
  double theta2 = 0.0;
  double tau2 = 1.0;
  double w2_inf = 0.0;
  double rad_f2 = 0.0;
};

inline void validate_bound_inputs(const BoundInputs& in) {
  if (!(in.delta > 0.0 && in.delta < 1.0))
    throw ContractError("bound inputs: delta in (0,1)");
  if (in.m < 1) throw ContractError("bound inputs: m >= 1");
  const double rad = static_cast<double>(in.d) * in.a_bound * in.a_bound -
                     in.theta * in.theta;
  if (rad < 0.0)
    throw ContractError("bound inputs: theta^2 > D A^2 (negative radicand)");
  if (in.has_branch2) {
    const double rad2 = static_cast<double>(in.d2) * in.a2_bound * in.a2_bound -
                        in.theta2 * in.theta2;
    if (rad2 < 0.0)
      throw ContractError("bound inputs: branch-2 negative radicand");
  }
}

// sup |h| <= ||w||_inf sqrt(D A^2 - theta^2), at probability tau
inline double sup_h_bound(const BoundInputs& in) {
  validate_bound_inputs(in);
  return in.w_inf * std::sqrt(static_cast<double>(in.d) * in.a_bound *
                                  in.a_bound -
                              in.theta * in.theta);
}

inline double theorem_rhs(TheoremId id, const BoundInputs& in) {
  validate_bound_inputs(in);
  const double dd = static_cast<double>(in.d);
  const double tail = std::sqrt(std::log(2.0 / in.delta) /
                                (2.0 * static_cast<double>(in.m)));
  const double sup_h = in.w_inf * std::sqrt(dd * in.a_bound * in.a_bound -
                                            in.theta * in.theta);
  switch (id) {
    case TheoremId::t1:
      return 4.0 * dd * in.w_inf * (sup_h + in.b_bound) * in.rad_f +
             0.5 * (sup_h + in.b_bound) * (sup_h + in.b_bound) * tail;
    case TheoremId::t2:
      return 4.0 * dd * in.w_inf * in.rad_f + (sup_h + in.b_bound) * tail;
    case TheoremId::t3:
      return 4.0 * dd * in.w_inf * in.rad_f + sup_h * tail;
    case TheoremId::t4: {
      if (!in.has_branch2)
        throw ContractError("theorem_rhs: t4 needs a second branch");
      const double dd2 = static_cast<double>(in.d2);
      const double j1 = in.w_inf * in.w_inf *
                        (dd * in.a_bound * in.a_bound - in.theta * in.theta);
      const double j2 =
          in.w2_inf * in.w2_inf *
          (dd2 * in.a2_bound * in.a2_bound - in.theta2 * in.theta2);
      return 8.0 * (std::sqrt(j1) + std::sqrt(j2)) *
                 (dd * in.w_inf * in.rad_f + dd2 * in.w2_inf * in.rad_f2) +
             (j1 + j2) * tail;
    }
  }
  throw ContractError("theorem_rhs: bad theorem");
}

// Nominal confidence the bound is stated at.
inline double confidence_level(TheoremId id, const BoundInputs& in) {
  if (id == TheoremId::t4) return (1.0 - in.delta) * in.tau * in.tau2;
  return (1.0 - in.delta) * in.tau;
}

struct GapMeasurement {
  double train_mean = 0.0;
  double heldout_mean = 0.0;
  double gap = 0.0;  // heldout - train, the empirical generalization gap
};

inline GapMeasurement measure_gap(const EbmModel& model, EnergyKind kind,
                                  const Matrix& xs_tr,
                                  std::span<const double> ys_tr,
                                  const Matrix& xs_ho,
                                  std::span<const double> ys_ho) {
  if (ys_tr.empty() || ys_ho.empty())
    throw ContractError("measure_gap: empty set");
  GapMeasurement g;
  const std::vector<double> e_tr = energy_batch_values(kind, model, xs_tr, ys_tr);
  const std::vector<double> e_ho = energy_batch_values(kind, model, xs_ho, ys_ho);
  for (double v : e_tr) g.train_mean += v;
  g.train_mean /= static_cast<double>(e_tr.size());
  for (double v : e_ho) g.heldout_mean += v;
  g.heldout_mean /= static_cast<double>(e_ho.size());
  g.gap = g.heldout_mean - g.train_mean;
  return g;
}

// Ridge-regularized least-squares head on a feature matrix; used to give
// joint-architecture runs a linear head the theorems can speak about.
inline std::vector<double> fit_linear_head(const Matrix& feats,
                                           std::span<const double> y,
                                           double ridge_rel = 1e-8) {
  require_shape(feats.rows() == y.size(), "fit_linear_head rows");
  const std::size_t m = feats.rows(), d = feats.cols();
  if (m == 0) throw ContractError("fit_linear_head: empty");
  Matrix gram(d, d);
  std::vector<double> rhs(d, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* fi = feats.data() + i * d;
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a; b < d; ++b) gram(a, b) += fi[a] * fi[b];
      rhs[a] += fi[a] * y[i];
    }
  }
  double tr = 0.0;
  for (std::size_t a = 0; a < d; ++a) tr += gram(a, a);
  const double lambda = ridge_rel * (tr / static_cast<double>(d)) + 1e-300;
  for (std::size_t a = 0; a < d; ++a) {
    gram(a, a) += lambda;
    for (std::size_t b = 0; b < a; ++b) gram(a, b) = gram(b, a);
  }
  // Cholesky solve, d is small
  Matrix l(d, d);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b <= a; ++b) {
      double s = gram(a, b);
      for (std::size_t c = 0; c < b; ++c) s -= l(a, c) * l(b, c);
      if (a == b) {
        if (s <= 0.0) throw NumericError("fit_linear_head: not positive definite");
        l(a, a) = std::sqrt(s);
      } else {
        l(a, b) = s / l(b, b);
      }
    }
  }
  std::vector<double> z(d), w(d);
  for (std::size_t a = 0; a < d; ++a) {
    double s = rhs[a];
    for (std::size_t c = 0; c < a; ++c) s -= l(a, c) * z[c];
    z[a] = s / l(a, a);
  }
  for (std::size_t a = d; a-- > 0;) {
    double s = z[a];
    for (std::size_t c = a + 1; c < d; ++c) s -= l(c, a) * w[c];
    w[a] = s / l(a, a);
  }
  return w;
}

struct LemmaCheck {
  int lemma = 0;
  double observed_sup = 0.0;
  double bound = 0.0;
  double violation_rate = 0.0;
  std::size_t n = 0;
};

struct ChainCheck {
  int lemma = 0;
  double lhs = 0.0;       // MC Rademacher of the realized energy function
  double lhs_stderr = 0.0;
  double rhs = 0.0;       // lemma bound built from the feature-class estimate
  bool ok = false;
};

struct LemmaReport {
  DiversityEstimate div;   // branch 1, in-sample at tau
  DiversityEstimate div2;  // branch 2 (implicit models); d == 0 if absent
  double b_bound = 0.0;    // max |y| over the train split
  std::vector<LemmaCheck> in_sample;
  std::vector<LemmaCheck> heldout;
  std::vector<ChainCheck> chain;
  std::size_t a_violations_heldout = 0;  // ||phi(x)|| > A on the heldout split
};

namespace detail {

inline LemmaCheck count_check(int lemma, std::span<const double> quantity,
                              double bound) {
  LemmaCheck c;
  c.lemma = lemma;
  c.bound = bound;
  c.n = quantity.size();
  std::size_t bad = 0;
  for (double q : quantity) {
    c.observed_sup = std::max(c.observed_sup, q);
    if (q > bound) ++bad;
  }
  c.violation_rate =
      static_cast<double>(bad) / static_cast<double>(quantity.size());
  return c;
}

}  // namespace detail

// Per-example checks of the sup bounds (lemmas 2, 3, 5, 7, 9) plus the
// Rademacher chain inequalities (lemmas 4, 6, 8, 10). theta, A and B come
// from the train split; heldout rows reuse them as diagnostics. The model
// must expose a linear head.
inline LemmaReport verify_lemmas(const EbmModel& model, const Matrix& xs_tr,
                                 std::span<const double> ys_tr,
                                 const Matrix& xs_ho,
                                 std::span<const double> ys_ho, double tau,
                                 std::size_t n_draws, Rng& rng) {
  if (model.head_w.empty())
    throw ContractError("verify_lemmas: model has no linear head");
  LemmaReport rep;
  Matrix phi_tr = mlp_forward(model.features, xs_tr);
  Matrix phi_ho = mlp_forward(model.features, xs_ho);
  rep.div = estimate_theta_tau(phi_tr, tau);
  for (double v : ys_tr) rep.b_bound = std::max(rep.b_bound, std::fabs(v));
  double w_inf = 0.0;
  for (double v : model.head_w) w_inf = std::max(w_inf, std::fabs(v));

  BoundInputs in;
  in.d = rep.div.d;
  in.a_bound = rep.div.a_bound;
  in.theta = rep.div.theta;
  in.tau = tau;
  in.w_inf = w_inf;
  in.b_bound = rep.b_bound;
  in.m = xs_tr.rows();
  const double sup_h = sup_h_bound(in);

  const bool implicit = !model.features2.empty() && !model.head_w2.empty();
  double j1 = 0.0, j2 = 0.0, w2_inf = 0.0;
  Matrix phi2_tr, phi2_ho;
  if (implicit) {
    Matrix y_tr(ys_tr.size(), 1), y_ho(ys_ho.size(), 1);
    for (std::size_t i = 0; i < ys_tr.size(); ++i) y_tr(i, 0) = ys_tr[i];
    for (std::size_t i = 0; i < ys_ho.size(); ++i) y_ho(i, 0) = ys_ho[i];
    phi2_tr = mlp_forward(model.features2, y_tr);
    phi2_ho = mlp_forward(model.features2, y_ho);
    rep.div2 = estimate_theta_tau(phi2_tr, tau);
    for (double v : model.head_w2) w2_inf = std::max(w2_inf, std::fabs(v));
    j1 = w_inf * w_inf *
         (static_cast<double>(rep.div.d) * rep.div.a_bound * rep.div.a_bound -
          rep.div.theta * rep.div.theta);
    j2 = w2_inf * w2_inf *
         (static_cast<double>(rep.div2.d) * rep.div2.a_bound *
              rep.div2.a_bound -
          rep.div2.theta * rep.div2.theta);
  }

  auto eval_split = [&](const Matrix& phi, const Matrix& phi2,
                        std::span<const double> ys,
                        std::vector<LemmaCheck>& out) {
    const std::size_t n = phi.rows();
    std::vector<double> abs_h(n), e2(n), e1(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double h = dot(phi.row(i), std::span<const double>(model.head_w));
      abs_h[i] = std::fabs(h);
      e2[i] = 0.5 * (h - ys[i]) * (h - ys[i]);
      e1[i] = std::fabs(h - ys[i]);
    }
    out.push_back(detail::count_check(2, abs_h, sup_h));
    out.push_back(detail::count_check(
        3, e2, 0.5 * (sup_h + rep.b_bound) * (sup_h + rep.b_bound)));
    out.push_back(detail::count_check(5, e1, sup_h + rep.b_bound));
    // classification energy -y h with y in {-1,+1} has magnitude |h|
    out.push_back(detail::count_check(7, abs_h, sup_h));
    if (implicit) {
      std::vector<double> ei(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double g1 = dot(phi.row(i), std::span<const double>(model.head_w));
        const double g2 =
            dot(phi2.row(i), std::span<const double>(model.head_w2));
        ei[i] = 0.5 * (g1 - g2) * (g1 - g2);
      }
      out.push_back(detail::count_check(9, ei, j1 + j2));
    }
  };
  eval_split(phi_tr, phi2_tr, ys_tr, rep.in_sample);
  eval_split(phi_ho, phi2_ho, ys_ho, rep.heldout);

  for (std::size_t i = 0; i < phi_ho.rows(); ++i) {
    double n2 = 0.0;
    for (double v : phi_ho.row(i)) n2 += v * v;
    if (std::sqrt(n2) > rep.div.a_bound) ++rep.a_violations_heldout;
  }

  // Rademacher chain: MC estimate over the realized energy function vs the
  // lemma RHS built from the feature-class estimate.
  const RademacherEstimate rad_f = estimate_rademacher(
      phi_tr, n_draws, RademacherMethod::finite_class_mc, rng, true);
  const std::size_t n = xs_tr.rows();
  std::vector<double> h_tr(n);
  for (std::size_t i = 0; i < n; ++i)
    h_tr[i] = dot(phi_tr.row(i), std::span<const double>(model.head_w));
  double y_med;
  {
    std::vector<double> ys_sorted(ys_tr.begin(), ys_tr.end());
    std::nth_element(ys_sorted.begin(), ys_sorted.begin() + n / 2,
                     ys_sorted.end());
    y_med = ys_sorted[n / 2];
  }
  auto chain_on = [&](int lemma, std::vector<double> evals, double rhs) {
    Matrix col(evals.size(), 1);
    for (std::size_t i = 0; i < evals.size(); ++i) col(i, 0) = evals[i];
    const RademacherEstimate lhs = estimate_rademacher(
        col, n_draws, RademacherMethod::finite_class_mc, rng, false);
    ChainCheck c;
    c.lemma = lemma;
    c.lhs = lhs.value;
    c.lhs_stderr = lhs.mc_stderr;
    c.rhs = rhs;
    c.ok = lhs.value <= rhs + 3.0 * lhs.mc_stderr;
    rep.chain.push_back(c);
  };
  const double dd = static_cast<double>(rep.div.d);
  std::vector<double> e2v(n), e1v(n), ecv(n);
  for (std::size_t i = 0; i < n; ++i) {
    e2v[i] = 0.5 * (h_tr[i] - ys_tr[i]) * (h_tr[i] - ys_tr[i]);
    e1v[i] = std::fabs(h_tr[i] - ys_tr[i]);
    ecv[i] = -(ys_tr[i] >= y_med ? 1.0 : -1.0) * h_tr[i];
  }
  chain_on(4, e2v, 2.0 * dd * w_inf * (sup_h + rep.b_bound) * rad_f.value);
  chain_on(6, e1v, 2.0 * dd * w_inf * rad_f.value);
  chain_on(8, ecv, 2.0 * dd * w_inf * rad_f.value);
  if (implicit) {
    const RademacherEstimate rad_f2 = estimate_rademacher(
        phi2_tr, n_draws, RademacherMethod::finite_class_mc, rng, true);
    std::vector<double> eiv(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double g2 =
          dot(phi2_tr.row(i), std::span<const double>(model.head_w2));
      eiv[i] = 0.5 * (h_tr[i] - g2) * (h_tr[i] - g2);
    }
    const double dd2 = static_cast<double>(rep.div2.d);
    chain_on(10, eiv,
             4.0 * (std::sqrt(j1) + std::sqrt(j2)) *
                 (dd * w_inf * rad_f.value + dd2 * w2_inf * rad_f2.value));
  }
  return rep;
}

// Everything a theorem check produces, serializable to one CSV row and a
// readable text block.
struct BoundReport {
  TheoremId theorem = TheoremId::t2;
  BoundInputs inputs;
  double rad_f_mc = 0.0;
  double rad_f_massart = 0.0;
  double rhs = 0.0;
  GapMeasurement gap;
  bool holds = false;
  double confidence = 0.0;
  LemmaReport lemmas;
};

namespace detail {

inline std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double lemma_rate(const std::vector<LemmaCheck>& checks, int lemma) {
  for (const auto& c : checks)
    if (c.lemma == lemma) return c.violation_rate;
  return std::nan("");
}

inline bool chain_ok(const std::vector<ChainCheck>& chain, int lemma,
                     bool absent_ok) {
  for (const auto& c : chain)
    if (c.lemma == lemma) return c.ok;
  return absent_ok;
}

}  // namespace detail

inline std::string bound_report_csv_header() {
  return "theorem,theta,tau,A,w_inf,B,m,delta,rad_f_mc,rad_f_massart,rhs,gap,"
         "holds,lemma2_viol,lemma3_viol,lemma5_viol,lemma7_viol,lemma9_viol,"
         "lemma2_viol_heldout,lemma3_viol_heldout,lemma5_viol_heldout,"
         "lemma7_viol_heldout,lemma9_viol_heldout,chain4_ok,chain6_ok,"
         "chain8_ok,chain10_ok,a_viol_heldout,confidence";
}

inline std::string bound_report_csv_row(const BoundReport& r) {
  std::ostringstream out;
  using detail::g17;
  out << to_string(r.theorem) << ',' << g17(r.inputs.theta) << ','
      << g17(r.inputs.tau) << ',' << g17(r.inputs.a_bound) << ','
      << g17(r.inputs.w_inf) << ',' << g17(r.inputs.b_bound) << ','
      << r.inputs.m << ',' << g17(r.inputs.delta) << ',' << g17(r.rad_f_mc)
      << ',' << g17(r.rad_f_massart) << ',' << g17(r.rhs) << ','
      << g17(r.gap.gap) << ',' << (r.holds ? 1 : 0);
  for (int lemma : {2, 3, 5, 7, 9})
    out << ',' << g17(detail::lemma_rate(r.lemmas.in_sample, lemma));
  for (int lemma : {2, 3, 5, 7, 9})
    out << ',' << g17(detail::lemma_rate(r.lemmas.heldout, lemma));
  for (int lemma : {4, 6, 8, 10})
    out << ',' << (detail::chain_ok(r.lemmas.chain, lemma, true) ? 1 : 0);
  out << ',' << r.lemmas.a_violations_heldout << ',' << g17(r.confidence);
  return out.str();
}

inline std::string bound_report_text(const BoundReport& r) {
  std::ostringstream out;
  out << "theorem " << to_string(r.theorem) << " at nominal level (1-delta)*tau = "
      << r.confidence << "\n"
      << "  inputs: D=" << r.inputs.d << " A=" << r.inputs.a_bound
      << " theta=" << r.inputs.theta << " (tau=" << r.inputs.tau
      << ", empirical quantile estimate)" << " ||w||_inf=" << r.inputs.w_inf
      << " B=" << r.inputs.b_bound << " m=" << r.inputs.m
      << " delta=" << r.inputs.delta << "\n"
      << "  R_m(F) proxies over the realized feature class {+/-phi_1..D}: mc="
      << r.rad_f_mc << " massart=" << r.rad_f_massart
      << " (rhs uses massart)\n"
      << "  rhs = " << r.rhs << ", measured gap = " << r.gap.gap
      << " (train mean " << r.gap.train_mean << ", heldout mean "
      << r.gap.heldout_mean << ")\n"
      << "  holds: " << (r.holds ? "yes" : "NO") << "\n";
  out << "  lemma sup-bound violation rates (in-sample / heldout):\n";
  for (int lemma : {2, 3, 5, 7, 9}) {
    const double a = detail::lemma_rate(r.lemmas.in_sample, lemma);
    const double b = detail::lemma_rate(r.lemmas.heldout, lemma);
    if (std::isnan(a)) continue;
    out << "    lemma " << lemma << ": " << a << " / " << b << "\n";
  }
  for (const auto& c : r.lemmas.chain)
    out << "  chain lemma " << c.lemma << ": mc(E-class)=" << c.lhs
        << " <= rhs=" << c.rhs << " : " << (c.ok ? "ok" : "FAIL") << "\n";
  out << "  heldout ||phi|| > A count: " << r.lemmas.a_violations_heldout
      << "\n";
  return out.str();
}

}  // namespace ebmdiv
