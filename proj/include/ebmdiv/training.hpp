#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ebmdiv/adam.hpp"
#include "ebmdiv/diversity.hpp"
#include "ebmdiv/energy.hpp"
#include "ebmdiv/errors.hpp"
#include "ebmdiv/matrix.hpp"
#include "ebmdiv/mlp.hpp"
#include "ebmdiv/rng.hpp"

namespace ebmdiv {

struct NceConfig {
  double sigma1 = 0.1;
  double sigma2 = 0.0;  // <= 0 means the default 8 * sigma1
  std::size_t m_samples = 1024;
  std::size_t batch_size = 32;
  std::size_t epochs = 75;
  double lr = 1e-3;

  double sigma2_value() const { return sigma2 > 0.0 ? sigma2 : 8.0 * sigma1; }
};

struct RegularizerConfig {
  double beta = 0.0;
  // index of the x-branch layer whose activations are the regularized
  // features; -1 means the branch output
  int feature_tap = -1;
};

// log q(y) for the equal-weight two-component Gaussian mixture centered at
// `center`, components sigma1 and sigma2.
inline double noise_logpdf(const NceConfig& cfg, double y, double center) {
  if (!(cfg.sigma1 > 0.0) || !(cfg.sigma2_value() > 0.0))
    throw ContractError("noise_logpdf: sigmas must be positive");
  const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi);
  const double d = y - center;
  const double s1 = cfg.sigma1, s2 = cfg.sigma2_value();
  const double l1 = log_norm - std::log(s1) - 0.5 * (d / s1) * (d / s1);
  const double l2 = log_norm - std::log(s2) - 0.5 * (d / s2) * (d / s2);
  const double mx = l1 > l2 ? l1 : l2;
  return std::log(0.5) + mx + std::log(std::exp(l1 - mx) + std::exp(l2 - mx));
}

// M mixture samples per example, centered at that example's own target.
// Layout: noise[i * M + k].
inline std::vector<double> draw_noise(const NceConfig& cfg,
                                      std::span<const double> ys, Rng& rng) {
  std::vector<double> noise(ys.size() * cfg.m_samples);
  for (std::size_t i = 0; i < ys.size(); ++i)
    for (std::size_t k = 0; k < cfg.m_samples; ++k) {
      const double s = rng.uniform() < 0.5 ? cfg.sigma1 : cfg.sigma2_value();
      noise[i * cfg.m_samples + k] = ys[i] + s * rng.normal();
    }
  return noise;
}

struct LossGrads {
  double loss = 0.0;
  std::vector<double> grads;  // flattened model order
};

// Scratch buffers reused across mini-batches; everything is resized on
// first use and recycled afterwards.
struct NceWorkspace {
  MlpCache cx, cy, cj, c2;
  Matrix ycand, z, ue, dpsi, dphi, up1, up2;
  std::vector<double> logq, energies, upstream;
  MlpGrads fg, yg, jg, f2g;
};

namespace detail {

// Per-example softmax over candidate scores s_k = -E_k - log q_k; fills
// the upstream dL/dE_ik = (delta_{k0} - p_ik) / B and returns the batch
// mean of -log p_0.
inline double nce_scores_to_upstream(std::span<const double> energies,
                                     std::span<const double> logq,
                                     std::size_t batch, std::size_t k_cand,
                                     std::span<double> upstream) {
  double loss_sum = 0.0;
  std::vector<double> s(k_cand);
  for (std::size_t i = 0; i < batch; ++i) {
    const double* e = energies.data() + i * k_cand;
    const double* q = logq.data() + i * k_cand;
    double mx = -1e300;
    for (std::size_t k = 0; k < k_cand; ++k) {
      s[k] = -e[k] - q[k];
      if (s[k] > mx) mx = s[k];
    }
    if (!std::isfinite(mx)) throw NumericError("nce_loss: non-finite score");
    double z = 0.0;
    for (std::size_t k = 0; k < k_cand; ++k) z += std::exp(s[k] - mx);
    loss_sum += -(s[0] - mx) + std::log(z);
    double* u = upstream.data() + i * k_cand;
    const double inv_b = 1.0 / static_cast<double>(batch);
    for (std::size_t k = 0; k < k_cand; ++k) {
      const double p = std::exp(s[k] - mx) / z;
      u[k] = ((k == 0 ? 1.0 : 0.0) - p) * inv_b;
    }
  }
  return loss_sum / static_cast<double>(batch);
}

inline void fill_candidates(std::span<const double> ys,
                            std::span<const double> noise, std::size_t m,
                            Matrix& ycand) {
  const std::size_t k_cand = m + 1;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    ycand(i * k_cand, 0) = ys[i];
    for (std::size_t k = 0; k < m; ++k)
      ycand(i * k_cand + k + 1, 0) = noise[i * m + k];
  }
}

}  // namespace detail

namespace detail {

inline void resize_matrix(Matrix& m, std::size_t rows, std::size_t cols) {
  if (m.rows() != rows || m.cols() != cols) m = Matrix(rows, cols);
}

}  // namespace detail

// Ranking NCE with pre-drawn noise: the true target competes with M noise
// samples under scores -E - log q. Gradients cover every model parameter.
inline LossGrads nce_loss_with_noise(const EbmModel& model, EnergyKind kind,
                                     const NceConfig& cfg, const Matrix& xs,
                                     std::span<const double> ys,
                                     std::span<const double> noise,
                                     NceWorkspace& ws) {
  require_shape(xs.rows() == ys.size(), "nce_loss batch rows");
  if (noise.size() != ys.size() * cfg.m_samples)
    throw DimensionError("nce_loss: noise buffer size");
  if (kind == EnergyKind::binary_classification)
    throw ContractError(
        "nce_loss: classification energy has no continuous target to sample");

  const std::size_t b = xs.rows();
  const std::size_t m = cfg.m_samples;
  const std::size_t k_cand = m + 1;
  const std::size_t n_all = b * k_cand;

  LossGrads out;
  out.grads.assign(param_count(model), 0.0);
  if (b == 0) return out;

  detail::resize_matrix(ws.ycand, n_all, 1);
  detail::fill_candidates(ys, noise, m, ws.ycand);
  ws.logq.resize(n_all);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k < k_cand; ++k)
      ws.logq[i * k_cand + k] =
          noise_logpdf(cfg, ws.ycand(i * k_cand + k, 0), ys[i]);

  const std::size_t n_feat = param_count(model.features);
  const std::size_t n_feat2 = param_count(model.features2);
  const std::size_t head_off = n_feat;
  const std::size_t feat2_off = head_off + model.head_w.size();
  const std::size_t head2_off = feat2_off + n_feat2;
  const std::size_t yemb_off = head2_off + model.head_w2.size();
  const std::size_t joint_off = yemb_off + param_count(model.y_embed);

  ws.energies.resize(n_all);
  ws.upstream.resize(n_all);

  switch (kind) {
    case EnergyKind::e2_regression:
    case EnergyKind::e1_regression: {
      const Matrix phi = mlp_forward(model.features, xs, &ws.cx);
      std::vector<double> g(b);
      for (std::size_t i = 0; i < b; ++i)
        g[i] = dot(phi.row(i), std::span<const double>(model.head_w));
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < k_cand; ++k)
          ws.energies[i * k_cand + k] =
              energy(kind, g[i], ws.ycand(i * k_cand + k, 0));
      out.loss = detail::nce_scores_to_upstream(ws.energies, ws.logq, b,
                                                k_cand, ws.upstream);
      // alpha_i = sum_k u_ik dE/dg at (g_i, y_ik)
      std::vector<double> alpha(b, 0.0);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < k_cand; ++k) {
          const double diff = g[i] - ws.ycand(i * k_cand + k, 0);
          const double dedg = kind == EnergyKind::e2_regression
                                  ? diff
                                  : detail::sgn0(diff);
          alpha[i] += ws.upstream[i * k_cand + k] * dedg;
        }
      detail::resize_matrix(ws.up1, b, phi.cols());
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < phi.cols(); ++j) {
          ws.up1(i, j) = alpha[i] * model.head_w[j];
          out.grads[head_off + j] += alpha[i] * phi(i, j);
        }
      ensure_zero_grads(model.features, ws.fg);
      mlp_backward_acc(model.features, ws.cx, ws.up1, ws.fg);
      flatten_grads(ws.fg, out.grads.data());
      break;
    }
    case EnergyKind::implicit_regression: {
      const Matrix phi1 = mlp_forward(model.features, xs, &ws.cx);
      const Matrix phi2 = mlp_forward(model.features2, ws.ycand, &ws.c2);
      std::vector<double> g1(b), g2(n_all);
      for (std::size_t i = 0; i < b; ++i)
        g1[i] = dot(phi1.row(i), std::span<const double>(model.head_w));
      for (std::size_t r = 0; r < n_all; ++r)
        g2[r] = dot(phi2.row(r), std::span<const double>(model.head_w2));
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < k_cand; ++k) {
          const double d = g1[i] - g2[i * k_cand + k];
          ws.energies[i * k_cand + k] = 0.5 * d * d;
        }
      out.loss = detail::nce_scores_to_upstream(ws.energies, ws.logq, b,
                                                k_cand, ws.upstream);
      std::vector<double> alpha(b, 0.0);
      detail::resize_matrix(ws.up2, n_all, phi2.cols());
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < k_cand; ++k) {
          const std::size_t r = i * k_cand + k;
          const double diff = g1[i] - g2[r];
          alpha[i] += ws.upstream[r] * diff;
          const double c2r = -ws.upstream[r] * diff;  // dL/dg2
          for (std::size_t j = 0; j < phi2.cols(); ++j) {
            ws.up2(r, j) = c2r * model.head_w2[j];
            out.grads[head2_off + j] += c2r * phi2(r, j);
          }
        }
      detail::resize_matrix(ws.up1, b, phi1.cols());
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < phi1.cols(); ++j) {
          ws.up1(i, j) = alpha[i] * model.head_w[j];
          out.grads[head_off + j] += alpha[i] * phi1(i, j);
        }
      ensure_zero_grads(model.features, ws.fg);
      mlp_backward_acc(model.features, ws.cx, ws.up1, ws.fg);
      flatten_grads(ws.fg, out.grads.data());
      ensure_zero_grads(model.features2, ws.f2g);
      mlp_backward_acc(model.features2, ws.c2, ws.up2, ws.f2g);
      flatten_grads(ws.f2g, out.grads.data() + feat2_off);
      break;
    }
    case EnergyKind::joint_mlp: {
      const Matrix phi = mlp_forward(model.features, xs, &ws.cx);
      const Matrix psi = mlp_forward(model.y_embed, ws.ycand, &ws.cy);
      const std::size_t d = phi.cols(), e_dim = psi.cols();
      detail::resize_matrix(ws.z, n_all, d + e_dim);
      for (std::size_t i = 0; i < b; ++i) {
        const double* pi = phi.data() + i * d;
        for (std::size_t k = 0; k < k_cand; ++k) {
          double* zr = ws.z.data() + (i * k_cand + k) * (d + e_dim);
          const double* pr = psi.data() + (i * k_cand + k) * e_dim;
          for (std::size_t j = 0; j < d; ++j) zr[j] = pi[j];
          for (std::size_t j = 0; j < e_dim; ++j) zr[d + j] = pr[j];
        }
      }
      const Matrix e = mlp_forward(model.joint, ws.z, &ws.cj);
      for (std::size_t r = 0; r < n_all; ++r) ws.energies[r] = e(r, 0);
      out.loss = detail::nce_scores_to_upstream(ws.energies, ws.logq, b,
                                                k_cand, ws.upstream);
      detail::resize_matrix(ws.ue, n_all, 1);
      for (std::size_t r = 0; r < n_all; ++r) ws.ue(r, 0) = ws.upstream[r];
      ensure_zero_grads(model.joint, ws.jg);
      mlp_backward_acc(model.joint, ws.cj, ws.ue, ws.jg);
      flatten_grads(ws.jg, out.grads.data() + joint_off);
      detail::resize_matrix(ws.dpsi, n_all, e_dim);
      detail::resize_matrix(ws.dphi, b, d);
      ws.dphi.fill(0.0);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < k_cand; ++k) {
          const std::size_t r = i * k_cand + k;
          const double* gi = ws.jg.ginput.data() + r * (d + e_dim);
          for (std::size_t j = 0; j < d; ++j) ws.dphi(i, j) += gi[j];
          double* dr = ws.dpsi.data() + r * e_dim;
          for (std::size_t j = 0; j < e_dim; ++j) dr[j] = gi[d + j];
        }
      ensure_zero_grads(model.y_embed, ws.yg);
      mlp_backward_acc(model.y_embed, ws.cy, ws.dpsi, ws.yg);
      flatten_grads(ws.yg, out.grads.data() + yemb_off);
      ensure_zero_grads(model.features, ws.fg);
      mlp_backward_acc(model.features, ws.cx, ws.dphi, ws.fg);
      flatten_grads(ws.fg, out.grads.data());
      break;
    }
    default:
      throw ContractError("nce_loss: unsupported kind");
  }
  if (!std::isfinite(out.loss)) throw NumericError("nce_loss: non-finite loss");
  return out;
}

inline LossGrads nce_loss_with_noise(const EbmModel& model, EnergyKind kind,
                                     const NceConfig& cfg, const Matrix& xs,
                                     std::span<const double> ys,
                                     std::span<const double> noise) {
  NceWorkspace ws;
  return nce_loss_with_noise(model, kind, cfg, xs, ys, noise, ws);
}

inline LossGrads nce_loss(const EbmModel& model, EnergyKind kind,
                          const NceConfig& cfg, const Matrix& xs,
                          std::span<const double> ys, Rng& noise_rng) {
  const std::vector<double> noise = draw_noise(cfg, ys, noise_rng);
  return nce_loss_with_noise(model, kind, cfg, xs, ys, noise);
}

// Value of the Eq-12 style penalty on the tapped x-branch activations plus
// its gradient w.r.t. the model parameters (features slot only).
inline double diversity_penalty_with_grads(const EbmModel& model,
                                           const Matrix& xs, int feature_tap,
                                           std::vector<double>& grads) {
  MlpCache cx;
  mlp_forward(model.features, xs, &cx);
  const std::size_t tap =
      feature_tap < 0 ? model.features.layers.size() - 1
                      : static_cast<std::size_t>(feature_tap);
  if (tap >= model.features.layers.size())
    throw ContractError("diversity penalty: bad feature tap");
  const Matrix& acts = cx.post[tap];
  const double penalty = diversity_penalty(acts);
  Matrix up = diversity_penalty_grad(acts);
  MlpGrads fg = make_zero_grads(model.features);
  mlp_backward_from(model.features, cx, up, tap, fg);
  grads.assign(param_count(model), 0.0);
  flatten_grads(fg, grads.data());
  return penalty;
}

// L_aug = L - beta * penalty. beta = 0 returns the base result untouched.
inline LossGrads augmented_loss(const LossGrads& base, const EbmModel& model,
                                const Matrix& xs,
                                const RegularizerConfig& reg) {
  if (reg.beta < 0.0) throw ContractError("augmented_loss: beta must be >= 0");
  if (reg.beta == 0.0) return base;
  std::vector<double> pgrads;
  const double penalty =
      diversity_penalty_with_grads(model, xs, reg.feature_tap, pgrads);
  LossGrads out;
  out.loss = base.loss - reg.beta * penalty;
  out.grads = base.grads;
  for (std::size_t i = 0; i < out.grads.size(); ++i)
    out.grads[i] -= reg.beta * pgrads[i];
  return out;
}

inline LossGrads augmented_nce_loss(const EbmModel& model, EnergyKind kind,
                                    const NceConfig& cfg,
                                    const RegularizerConfig& reg,
                                    const Matrix& xs,
                                    std::span<const double> ys,
                                    Rng& noise_rng) {
  return augmented_loss(nce_loss(model, kind, cfg, xs, ys, noise_rng), model,
                        xs, reg);
}

inline LossGrads augmented_nce_loss(const EbmModel& model, EnergyKind kind,
                                    const NceConfig& cfg,
                                    const RegularizerConfig& reg,
                                    const Matrix& xs,
                                    std::span<const double> ys, Rng& noise_rng,
                                    NceWorkspace& ws) {
  const std::vector<double> noise = draw_noise(cfg, ys, noise_rng);
  return augmented_loss(nce_loss_with_noise(model, kind, cfg, xs, ys, noise, ws),
                        model, xs, reg);
}

struct TrainSettings {
  EnergyKind kind = EnergyKind::joint_mlp;
  NceConfig nce;
  RegularizerConfig reg;
  std::uint64_t seed = 0;
  std::size_t hidden = 10;
  std::size_t d_features = 10;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean augmented loss per epoch
  EbmModel model;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
};

// Seeded mini-batch training: shuffled batches per epoch, fresh noise per
// epoch, Adam on the augmented loss. Fully deterministic given the seed.
inline TrainReport train(const TrainSettings& ts, const Matrix& xs,
                         std::span<const double> ys) {
  require_shape(xs.rows() == ys.size(), "train rows");
  if (xs.rows() == 0) throw ContractError("train: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();

  Rng init_rng(mix_seed(ts.seed, 0x1A17));
  TrainReport report;
  report.seed = ts.seed;
  report.model =
      make_model_for(ts.kind, xs.cols(), ts.hidden, ts.d_features, init_rng);

  std::vector<double> params = flatten_params(report.model);
  AdamState adam(params.size(), AdamConfig{ts.nce.lr, 0.9, 0.999, 1e-8});
  const std::size_t n = xs.rows();
  const std::size_t bs = ts.nce.batch_size == 0 ? n : ts.nce.batch_size;
  NceWorkspace ws;

  for (std::size_t ep = 0; ep < ts.nce.epochs; ++ep) {
    Rng shuffle_rng(mix_seed(mix_seed(ts.seed, 0x5F0F), ep));
    Rng noise_rng(mix_seed(mix_seed(ts.seed, 0x2071), ep));
    const std::vector<std::size_t> order = shuffle_rng.permutation(n);
    double loss_sum = 0.0;
    for (std::size_t start = 0, bi = 0; start < n; start += bs, ++bi) {
      const std::size_t bn = std::min(bs, n - start);
      Matrix xb(bn, xs.cols());
      std::vector<double> yb(bn);
      for (std::size_t r = 0; r < bn; ++r) {
        const std::size_t src = order[start + r];
        for (std::size_t c = 0; c < xs.cols(); ++c) xb(r, c) = xs(src, c);
        yb[r] = ys[src];
      }
      try {
        const LossGrads lg = augmented_nce_loss(report.model, ts.kind, ts.nce,
                                                ts.reg, xb, yb, noise_rng, ws);
        loss_sum += lg.loss * static_cast<double>(bn);
        adam_step(adam, params, lg.grads);
      } catch (const NumericError& e) {
        throw NumericError("train: " + std::string(e.what()) + " at epoch " +
                           std::to_string(ep) + " batch " + std::to_string(bi));
      }
      unflatten_params(report.model, params);
    }
    const double epoch_mean = loss_sum / static_cast<double>(n);
    if (!std::isfinite(epoch_mean))
      throw NumericError("train: non-finite epoch loss at epoch " +
                         std::to_string(ep));
    report.epoch_loss.push_back(epoch_mean);
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return report;
}

}  // namespace ebmdiv
