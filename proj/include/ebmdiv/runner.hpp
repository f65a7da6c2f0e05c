#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ebmdiv/bounds.hpp"
#include "ebmdiv/dataio.hpp"
#include "ebmdiv/energy.hpp"
#include "ebmdiv/errors.hpp"
#include "ebmdiv/evaluation.hpp"
#include "ebmdiv/run_config.hpp"
#include "ebmdiv/training.hpp"

namespace ebmdiv {

inline std::string default_out_root() {
  if (const char* env = std::getenv("EBMDIV_OUT"); env && *env) return env;
  return "out";
}

inline std::string format_beta(double beta) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", beta);
  return buf;
}

inline std::string default_run_id(const RunConfig& c) {
  std::ostringstream id;
  id << to_string(c.generator) << "_" << to_string(c.kind) << "_s" << c.seed
     << "_b" << format_beta(c.reg.beta) << "_sig" << format_beta(c.nce.sigma1);
  return id.str();
}

// Fills out_dir/run_id so artifacts land in <out>/<run_id>/.
inline RunConfig resolve_config(RunConfig c) {
  if (c.out_dir.empty()) c.out_dir = default_out_root();
  if (c.run_id.empty()) c.run_id = default_run_id(c);
  return c;
}

inline std::string run_dir(const RunConfig& c) {
  return c.out_dir + "/" + c.run_id;
}

// ---------------------------------------------------------------------
// model snapshot (plain text, 17-significant-digit values)
// ---------------------------------------------------------------------

namespace detail {

inline void write_net(std::ostream& out, const char* name, const Mlp& net) {
  out << "net " << name << " " << net.layers.size() << "\n";
  for (const auto& l : net.layers) {
    out << "layer " << l.w.rows() << " " << l.w.cols() << " "
        << (l.act == Activation::relu ? "relu" : "identity") << "\n";
    out << "w";
    for (std::size_t i = 0; i < l.w.size(); ++i)
      out << ' ' << format_g17(l.w.data()[i]);
    out << "\nb";
    for (double v : l.b) out << ' ' << format_g17(v);
    out << "\n";
  }
}

inline void write_head(std::ostream& out, const char* name,
                       const std::vector<double>& w) {
  out << name << " " << w.size();
  for (double v : w) out << ' ' << format_g17(v);
  out << "\n";
}

inline Mlp read_net(std::istream& in, const char* name) {
  std::string tok, got;
  std::size_t n_layers = 0;
  in >> tok >> got >> n_layers;
  if (tok != "net" || got != name)
    throw IoError("model snapshot: expected net " + std::string(name));
  Mlp net;
  for (std::size_t l = 0; l < n_layers; ++l) {
    std::size_t rows = 0, cols = 0;
    std::string act;
    in >> tok >> rows >> cols >> act;
    if (tok != "layer") throw IoError("model snapshot: expected layer");
    DenseLayer layer;
    layer.w = Matrix(rows, cols);
    layer.b.assign(cols, 0.0);
    layer.act = act == "relu" ? Activation::relu : Activation::identity;
    in >> tok;
    if (tok != "w") throw IoError("model snapshot: expected w");
    for (std::size_t i = 0; i < layer.w.size(); ++i) in >> layer.w.data()[i];
    in >> tok;
    if (tok != "b") throw IoError("model snapshot: expected b");
    for (double& v : layer.b) in >> v;
    if (!in) throw IoError("model snapshot: truncated layer data");
    net.layers.push_back(std::move(layer));
  }
  return net;
}

inline std::vector<double> read_head(std::istream& in, const char* name) {
  std::string tok;
  std::size_t n = 0;
  in >> tok >> n;
  if (tok != name) throw IoError("model snapshot: expected " + std::string(name));
  std::vector<double> w(n);
  for (double& v : w) in >> v;
  if (!in) throw IoError("model snapshot: truncated head data");
  return w;
}

}  // namespace detail

inline void save_model(const EbmModel& m, EnergyKind kind,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "# ebmdiv model snapshot\n";
  out << "kind " << to_string(kind) << "\n";
  detail::write_net(out, "features", m.features);
  detail::write_head(out, "head", m.head_w);
  detail::write_net(out, "features2", m.features2);
  detail::write_head(out, "head2", m.head_w2);
  detail::write_net(out, "y_embed", m.y_embed);
  detail::write_net(out, "joint", m.joint);
  if (!out) throw IoError("write failed: " + path);
}

inline std::pair<EbmModel, EnergyKind> load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("missing model snapshot: " + path);
  std::string line;
  std::getline(in, line);  // comment header
  std::string tok, kind_s;
  in >> tok >> kind_s;
  if (tok != "kind") throw IoError("model snapshot: expected kind");
  EbmModel m;
  m.features = detail::read_net(in, "features");
  m.head_w = detail::read_head(in, "head");
  m.features2 = detail::read_net(in, "features2");
  m.head_w2 = detail::read_head(in, "head2");
  m.y_embed = detail::read_net(in, "y_embed");
  m.joint = detail::read_net(in, "joint");
  return {std::move(m), energy_kind_from_string(kind_s)};
}

// ---------------------------------------------------------------------
// train
// ---------------------------------------------------------------------

struct TrainOutcome {
  RunConfig cfg;
  std::string dir;
  TrainReport report;
  Dataset train_set, heldout_set;
};

inline std::pair<Dataset, Dataset> config_split(const RunConfig& c) {
  const Dataset all = config_dataset(c);
  return split_train_heldout(all, c.train_frac, mix_seed(c.data_seed, 0x5E17));
}

inline TrainOutcome run_train(const RunConfig& raw) {
  TrainOutcome out;
  out.cfg = resolve_config(raw);
  auto [tr, ho] = config_split(out.cfg);
  out.train_set = std::move(tr);
  out.heldout_set = std::move(ho);

  TrainSettings ts;
  ts.kind = out.cfg.kind;
  ts.nce = out.cfg.nce;
  ts.reg = out.cfg.reg;
  ts.seed = out.cfg.seed;
  ts.hidden = out.cfg.hidden;
  ts.d_features = out.cfg.d_features;
  out.report = train(ts, out.train_set.x_matrix(), out.train_set.y);

  out.dir = run_dir(out.cfg);
  std::filesystem::create_directories(out.dir);
  save_run_config(out.cfg, out.dir + "/config.cfg");
  save_model(out.report.model, out.cfg.kind, out.dir + "/model.txt");
  std::ofstream rep(out.dir + "/train_report.csv", std::ios::binary);
  if (!rep) throw IoError("cannot write train_report.csv in " + out.dir);
  rep << "# meta: wall_seconds=" << out.report.wall_seconds << "\n";
  rep << "epoch,loss\n";
  for (std::size_t e = 0; e < out.report.epoch_loss.size(); ++e)
    rep << e << ',' << format_g17(out.report.epoch_loss[e]) << "\n";
  return out;
}

// ---------------------------------------------------------------------
// eval: grid KL against the analytic density (generators only) and NLL on
// a test split
// ---------------------------------------------------------------------

struct EvalOutcome {
  double kl = std::nan("");  // mean over probe inputs; nan for csv data
  NllResult nll;
  std::string metric_name;  // which column a sweep aggregates
  double metric = 0.0;
};

inline Dataset config_test_set(const RunConfig& c, const Dataset& heldout) {
  if (c.generator == GeneratorId::a)
    return gen_dataset_a(config_n_test(c), mix_seed(c.data_seed, 0x7E57));
  if (c.generator == GeneratorId::b)
    return gen_dataset_b(config_n_test(c), mix_seed(c.data_seed, 0x7E57));
  Dataset t = heldout;
  t.split = "test";
  return t;
}

inline EvalOutcome evaluate_model(const RunConfig& cfg, const EbmModel& model,
                                  const Dataset& train_set,
                                  const Dataset& heldout_set) {
  EvalOutcome out;
  const GridSpec grid =
      make_grid_spec(train_set.y, cfg.grid_pad, cfg.grid_points);
  if (cfg.generator != GeneratorId::none) {
    const auto [x_lo, x_hi] = generator_x_range(cfg.generator);
    const std::size_t n_probe = 200;
    double kl_sum = 0.0;
    for (std::size_t j = 0; j < n_probe; ++j) {
      const double x = x_lo + (x_hi - x_lo) * (static_cast<double>(j) + 0.5) /
                                  static_cast<double>(n_probe);
      const DensityGrid truth = density_from_pdf(
          [&](double y) { return true_conditional_pdf(cfg.generator, x, y); },
          grid);
      const DensityGrid fit =
          model_density(model, cfg.kind, std::span<const double>(&x, 1), grid);
      kl_sum += kl_divergence_grid(truth, fit);
    }
    out.kl = kl_sum / static_cast<double>(n_probe);
  }
  const Dataset test = config_test_set(cfg, heldout_set);
  out.nll = nll_grid(model, cfg.kind, test.x_matrix(), test.y, grid);
  if (cfg.generator == GeneratorId::a && std::isfinite(out.kl)) {
    out.metric_name = "kl";
    out.metric = out.kl;
  } else {
    out.metric_name = "nll";
    out.metric = out.nll.nll;
  }
  return out;
}

inline EvalOutcome run_eval(const std::string& dir,
                            bool write_density_csv = true) {
  const RunConfig cfg = load_run_config(dir + "/config.cfg");
  auto [model, kind] = load_model(dir + "/model.txt");
  (void)kind;
  auto [tr, ho] = config_split(cfg);
  EvalOutcome out = evaluate_model(cfg, model, tr, ho);

  std::ofstream ev(dir + "/eval.csv", std::ios::binary);
  if (!ev) throw IoError("cannot write eval.csv in " + dir);
  ev << "kl,nll,nll_excluded,nll_points\n";
  ev << (std::isfinite(out.kl) ? format_g17(out.kl) : std::string("na")) << ','
     << format_g17(out.nll.nll) << ',' << out.nll.excluded << ','
     << out.nll.used << "\n";

  if (write_density_csv && cfg.generator != GeneratorId::none) {
    const auto [x_lo, x_hi] = generator_x_range(cfg.generator);
    const GridSpec grid = make_grid_spec(tr.y, cfg.grid_pad, cfg.grid_points);
    for (int i = 0; i < 5; ++i) {
      const double x =
          x_lo + (x_hi - x_lo) * (0.1 + 0.2 * static_cast<double>(i));
      const DensityGrid g =
          model_density(model, cfg.kind, std::span<const double>(&x, 1), grid);
      std::ofstream dc(dir + "/density_" + std::to_string(i) + ".csv",
                       std::ios::binary);
      dc << "y,p\n";
      for (std::size_t k = 0; k < g.n_points; ++k)
        dc << format_g17(g.point(k)) << ',' << format_g17(g.mass[k]) << "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------
// bounds: evaluate a theorem RHS on a trained run and measure the gap
// ---------------------------------------------------------------------

inline EnergyKind gap_kind_for(TheoremId id) {
  switch (id) {
    case TheoremId::t1: return EnergyKind::e2_regression;
    case TheoremId::t2: return EnergyKind::e1_regression;
    case TheoremId::t3: return EnergyKind::binary_classification;
    case TheoremId::t4: return EnergyKind::implicit_regression;
  }
  throw ContractError("gap_kind_for: bad theorem");
}

// Joint-architecture runs carry no linear head; the theorems hold for any
// w over the realized features, so a least-squares head on the train split
// supplies one. Linear-head runs keep their trained head.
inline EbmModel bound_view_model(const EbmModel& trained,
                                 const Matrix& xs_tr,
                                 std::span<const double> ys_tr) {
  EbmModel view = trained;
  if (view.head_w.empty()) {
    Matrix phi = mlp_forward(view.features, xs_tr);
    view.head_w = fit_linear_head(phi, ys_tr);
  }
  return view;
}

inline BoundReport compute_bound_report(const RunConfig& cfg,
                                        const EbmModel& trained,
                                        const Dataset& train_set,
                                        const Dataset& heldout_set,
                                        double tau, double delta,
                                        TheoremId theorem) {
  const Matrix xs_tr = train_set.x_matrix();
  const Matrix xs_ho = heldout_set.x_matrix();
  const EbmModel view = bound_view_model(trained, xs_tr, train_set.y);
  const EnergyKind gkind = gap_kind_for(theorem);
  if (theorem == TheoremId::t4 &&
      (view.features2.empty() || view.head_w2.empty()))
    throw ContractError("bounds: t4 needs an implicit-regression model");

  BoundReport rep;
  rep.theorem = theorem;
  Matrix phi_tr = mlp_forward(view.features, xs_tr);
  const DiversityEstimate div = estimate_theta_tau(phi_tr, tau);
  rep.inputs.d = div.d;
  rep.inputs.a_bound = div.a_bound;
  rep.inputs.theta = div.theta;
  rep.inputs.tau = tau;
  for (double v : view.head_w)
    rep.inputs.w_inf = std::max(rep.inputs.w_inf, std::fabs(v));
  for (double v : train_set.y)
    rep.inputs.b_bound = std::max(rep.inputs.b_bound, std::fabs(v));
  rep.inputs.m = xs_tr.rows();
  rep.inputs.delta = delta;

  Rng rad_rng(mix_seed(cfg.seed, 0x4AD));
  const RademacherEstimate mc = estimate_rademacher(
      phi_tr, cfg.n_draws, RademacherMethod::finite_class_mc, rad_rng, true);
  const RademacherEstimate massart = estimate_rademacher(
      phi_tr, 0, RademacherMethod::massart_upper, rad_rng, true);
  rep.rad_f_mc = mc.value;
  rep.rad_f_massart = massart.value;
  rep.inputs.rad_f = massart.value;  // conservative side of the proxy pair

  if (theorem == TheoremId::t4) {
    Matrix y_tr(train_set.y.size(), 1);
    for (std::size_t i = 0; i < train_set.y.size(); ++i)
      y_tr(i, 0) = train_set.y[i];
    Matrix phi2_tr = mlp_forward(view.features2, y_tr);
    const DiversityEstimate div2 = estimate_theta_tau(phi2_tr, tau);
    rep.inputs.has_branch2 = true;
    rep.inputs.d2 = div2.d;
    rep.inputs.a2_bound = div2.a_bound;
    rep.inputs.theta2 = div2.theta;
    rep.inputs.tau2 = tau;
    for (double v : view.head_w2)
      rep.inputs.w2_inf = std::max(rep.inputs.w2_inf, std::fabs(v));
    const RademacherEstimate massart2 = estimate_rademacher(
        phi2_tr, 0, RademacherMethod::massart_upper, rad_rng, true);
    rep.inputs.rad_f2 = massart2.value;
  }

  rep.rhs = theorem_rhs(theorem, rep.inputs);
  rep.confidence = confidence_level(theorem, rep.inputs);

  if (gkind == EnergyKind::binary_classification) {
    std::vector<double> ys_sorted(train_set.y);
    std::nth_element(ys_sorted.begin(), ys_sorted.begin() + ys_sorted.size() / 2,
                     ys_sorted.end());
    const double med = ys_sorted[ys_sorted.size() / 2];
    auto labels = [&](const std::vector<double>& ys) {
      std::vector<double> l(ys.size());
      for (std::size_t i = 0; i < ys.size(); ++i)
        l[i] = ys[i] >= med ? 1.0 : -1.0;
      return l;
    };
    const std::vector<double> l_tr = labels(train_set.y);
    const std::vector<double> l_ho = labels(heldout_set.y);
    rep.gap = measure_gap(view, gkind, xs_tr, l_tr, xs_ho, l_ho);
  } else {
    rep.gap = measure_gap(view, gkind, xs_tr, train_set.y, xs_ho,
                          heldout_set.y);
  }
  rep.holds = rep.gap.gap <= rep.rhs;

  Rng lemma_rng(mix_seed(cfg.seed, 0x1E44A));
  rep.lemmas = verify_lemmas(view, xs_tr, train_set.y, xs_ho, heldout_set.y,
                             tau, cfg.n_draws, lemma_rng);
  return rep;
}

inline BoundReport run_bounds(const std::string& dir, double tau, double delta,
                              TheoremId theorem) {
  const RunConfig cfg = load_run_config(dir + "/config.cfg");
  auto [model, kind] = load_model(dir + "/model.txt");
  (void)kind;
  auto [tr, ho] = config_split(cfg);
  BoundReport rep = compute_bound_report(cfg, model, tr, ho, tau, delta,
                                         theorem);
  std::ofstream out(dir + "/bound_report.csv", std::ios::binary);
  if (!out) throw IoError("cannot write bound_report.csv in " + dir);
  out << bound_report_csv_header() << "\n" << bound_report_csv_row(rep) << "\n";
  return rep;
}

// ---------------------------------------------------------------------
// sweep: the beta x sigma1 x seed grid with per-run metric and bound check
// ---------------------------------------------------------------------

struct SweepSpec {
  std::vector<double> betas{0.0, 1e-11, 1e-12, 1e-13};
  std::vector<double> sigmas{0.05, 0.1, 0.2};
  std::size_t n_seeds = 20;
  std::size_t jobs = 2;
  TheoremId theorem = TheoremId::t2;
};

struct SweepRunRow {
  double beta = 0.0, sigma1 = 0.0;
  std::uint64_t seed = 0;
  std::string run_id;
  std::string metric_name;
  double metric = 0.0;
  double gap = 0.0, rhs = 0.0;
  bool holds = false;
  bool ok = false;
  std::string error;
};

struct SweepCell {
  double beta = 0.0, sigma1 = 0.0;
  std::size_t n = 0;
  double mean = 0.0, stderr_mean = 0.0;
};

struct SweepOutcome {
  std::vector<SweepRunRow> rows;
  std::vector<SweepCell> cells;
  std::size_t failures = 0;
  bool all_hold = true;
  std::string out_dir;
};

// Baseline beta = 0 always leads the table; missing 0 is inserted.
inline std::vector<double> sweep_betas(const SweepSpec& spec) {
  std::vector<double> betas;
  betas.push_back(0.0);
  for (double b : spec.betas)
    if (b != 0.0) betas.push_back(b);
  return betas;
}

inline SweepOutcome run_sweep(const RunConfig& base, const SweepSpec& spec,
                              const std::string& out_dir) {
  if (spec.sigmas.empty() || spec.n_seeds == 0)
    throw ContractError("sweep: empty sigma list or zero seeds");
  SweepOutcome out;
  out.out_dir = out_dir;
  std::filesystem::create_directories(out_dir + "/runs");

  const std::vector<double> betas = sweep_betas(spec);
  struct Task {
    double beta, sigma;
    std::uint64_t seed_index;
  };
  std::vector<Task> tasks;
  for (double b : betas)
    for (double s : spec.sigmas)
      for (std::size_t k = 0; k < spec.n_seeds; ++k)
        tasks.push_back({b, s, k});
  out.rows.resize(tasks.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& t = tasks[i];
      SweepRunRow row;
      row.beta = t.beta;
      row.sigma1 = t.sigma;
      row.seed = base.seed + t.seed_index;
      RunConfig cfg = base;
      cfg.nce.sigma1 = t.sigma;
      cfg.nce.sigma2 = 0.0;  // keep the 8 * sigma1 coupling
      cfg.reg.beta = t.beta;
      cfg.seed = row.seed;
      cfg.out_dir = out_dir + "/runs";
      cfg.run_id = "b" + format_beta(t.beta) + "_sig" + format_beta(t.sigma) +
                   "_seed" + std::to_string(t.seed_index);
      row.run_id = cfg.run_id;
      try {
        TrainOutcome tr = run_train(cfg);
        const EvalOutcome ev = evaluate_model(cfg, tr.report.model,
                                              tr.train_set, tr.heldout_set);
        row.metric_name = ev.metric_name;
        row.metric = ev.metric;
        std::ofstream evf(tr.dir + "/eval.csv", std::ios::binary);
        evf << "kl,nll,nll_excluded,nll_points\n"
            << (std::isfinite(ev.kl) ? format_g17(ev.kl) : std::string("na"))
            << ',' << format_g17(ev.nll.nll) << ',' << ev.nll.excluded << ','
            << ev.nll.used << "\n";
        const BoundReport rep =
            compute_bound_report(cfg, tr.report.model, tr.train_set,
                                 tr.heldout_set, cfg.tau, cfg.delta,
                                 spec.theorem);
        std::ofstream bf(tr.dir + "/bound_report.csv", std::ios::binary);
        bf << bound_report_csv_header() << "\n"
           << bound_report_csv_row(rep) << "\n";
        row.gap = rep.gap.gap;
        row.rhs = rep.rhs;
        row.holds = rep.holds;
        row.ok = true;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
      out.rows[i] = std::move(row);
    }
  };
  std::vector<std::thread> pool;
  const std::size_t jobs = std::max<std::size_t>(1, spec.jobs);
  for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  for (const auto& row : out.rows) {
    if (!row.ok) ++out.failures;
    else if (!row.holds) out.all_hold = false;
  }

  // aggregate cells in task order (beta outer, sigma inner)
  for (double b : betas)
    for (double s : spec.sigmas) {
      SweepCell cell;
      cell.beta = b;
      cell.sigma1 = s;
      double sum = 0.0, sum2 = 0.0;
      for (const auto& row : out.rows)
        if (row.ok && row.beta == b && row.sigma1 == s) {
          ++cell.n;
          sum += row.metric;
          sum2 += row.metric * row.metric;
        }
      if (cell.n > 0) {
        cell.mean = sum / static_cast<double>(cell.n);
        const double var = std::max(
            0.0, sum2 / static_cast<double>(cell.n) - cell.mean * cell.mean);
        cell.stderr_mean = cell.n > 1 ? std::sqrt(var / static_cast<double>(
                                                            cell.n - 1))
                                      : 0.0;
      }
      out.cells.push_back(cell);
    }

  std::ofstream runs(out_dir + "/sweep_runs.csv", std::ios::binary);
  runs << "beta,sigma1,seed,run_id,metric_name,metric,gap,rhs,holds,status,"
          "error\n";
  for (const auto& r : out.rows)
    runs << format_beta(r.beta) << ',' << format_g17(r.sigma1) << ',' << r.seed
         << ',' << r.run_id << ',' << r.metric_name << ','
         << format_g17(r.metric) << ',' << format_g17(r.gap) << ','
         << format_g17(r.rhs) << ',' << (r.holds ? 1 : 0) << ','
         << (r.ok ? "ok" : "failed") << ',' << r.error << "\n";

  std::ofstream cellsf(out_dir + "/sweep_cells.csv", std::ios::binary);
  cellsf << "beta,sigma1,n,mean,stderr\n";
  for (const auto& c : out.cells)
    cellsf << format_beta(c.beta) << ',' << format_g17(c.sigma1) << ',' << c.n
           << ',' << format_g17(c.mean) << ',' << format_g17(c.stderr_mean)
           << "\n";

  std::ofstream table(out_dir + "/sweep_table.csv", std::ios::binary);
  table << "approach";
  for (double s : spec.sigmas) table << ",sigma1=" << format_beta(s);
  table << "\n";
  for (double b : betas) {
    table << "beta=" << format_beta(b);
    for (double s : spec.sigmas) {
      for (const auto& c : out.cells)
        if (c.beta == b && c.sigma1 == s) {
          table << ',' << format_g17(c.mean);
          break;
        }
    }
    table << "\n";
  }
  return out;
}

}  // namespace ebmdiv
