#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ebmdiv/dataio.hpp"
#include "ebmdiv/evaluation.hpp"
#include "ebmdiv/rng.hpp"
#include "ebmdiv/training.hpp"

using namespace ebmdiv;

namespace {

EbmModel constant_energy_model() {
  Rng rng(0);
  EbmModel m = make_joint_model(1, 4, 4, rng);
  std::vector<double> zeros(param_count(m), 0.0);
  unflatten_params(m, zeros);
  return m;
}

DensityGrid grid_from_mass(std::vector<double> mass) {
  DensityGrid g;
  g.y_lo = 0.0;
  g.y_hi = 1.0;
  g.n_points = mass.size();
  g.dy = 1.0 / static_cast<double>(mass.size() - 1);
  g.mass = std::move(mass);
  return g;
}

}  // namespace

TEST_CASE("constant energy gives the uniform distribution") {
  const EbmModel m = constant_energy_model();
  const double x = 0.3;
  const DensityGrid g = model_density(m, EnergyKind::joint_mlp, {&x, 1},
                                      GridSpec{-2.0, 2.0, 64});
  for (double v : g.mass) CHECK(v == Catch::Approx(1.0 / 64).epsilon(1e-12));
}

TEST_CASE("e2 energy gives a discretized gaussian with the mode at g") {
  EbmModel m;
  {
    Mlp net;
    DenseLayer l;
    l.w = Matrix(1, 1);
    l.w(0, 0) = 1.0;
    l.b.assign(1, 0.0);
    l.act = Activation::identity;
    net.layers.push_back(l);
    m.features = net;
    m.head_w = {1.0};
  }
  const double x = 0.37;  // g = 0.37
  const GridSpec spec{-2.0, 2.0, 513};
  const DensityGrid g = model_density(m, EnergyKind::e2_regression, {&x, 1},
                                      spec);
  std::size_t mode = 0;
  for (std::size_t i = 1; i < g.n_points; ++i)
    if (g.mass[i] > g.mass[mode]) mode = i;
  CHECK(std::fabs(g.point(mode) - 0.37) <= g.dy);
  double sum = 0.0;
  for (double v : g.mass) sum += v;
  CHECK(std::fabs(sum - 1.0) < 1e-12);
}

TEST_CASE("density is invariant to shifting all energies") {
  Rng rng(6);
  EbmModel m = make_joint_model(1, 5, 5, rng);
  EbmModel shifted = m;
  shifted.joint.layers.back().b[0] += 25.0;  // E + 25 everywhere
  const double x = -0.4;
  const GridSpec spec{-3.0, 3.0, 128};
  const DensityGrid a = model_density(m, EnergyKind::joint_mlp, {&x, 1}, spec);
  const DensityGrid b =
      model_density(shifted, EnergyKind::joint_mlp, {&x, 1}, spec);
  for (std::size_t i = 0; i < a.n_points; ++i)
    CHECK(a.mass[i] == Catch::Approx(b.mass[i]).epsilon(1e-11));
}

TEST_CASE("kl divergence hand values and properties") {
  CHECK(kl_divergence_grid(grid_from_mass({0.5, 0.5}),
                           grid_from_mass({0.5, 0.5})) == 0.0);
  CHECK(kl_divergence_grid(grid_from_mass({0.5, 0.5}),
                           grid_from_mass({0.25, 0.75})) ==
        Catch::Approx(0.14384103622589042).epsilon(1e-14));
  Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> p(8), q(8);
    double sp = 0.0, sq = 0.0;
    for (int i = 0; i < 8; ++i) {
      p[i] = rng.uniform(0.01, 1.0);
      q[i] = rng.uniform(0.01, 1.0);
      sp += p[i];
      sq += q[i];
    }
    for (int i = 0; i < 8; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    CHECK(kl_divergence_grid(grid_from_mass(p), grid_from_mass(q)) >= 0.0);
  }
  // flooring keeps the value finite when the model starves a cell
  const double kl = kl_divergence_grid(grid_from_mass({0.5, 0.5}),
                                       grid_from_mass({1.0, 0.0}));
  CHECK(std::isfinite(kl));
  CHECK_THROWS_AS(kl_divergence_grid(grid_from_mass({0.5, 0.5}),
                                     grid_from_mass({0.3, 0.3, 0.4})),
                  ContractError);
}

TEST_CASE("nll of the uniform model is log n for on-grid targets") {
  const EbmModel m = constant_energy_model();
  const GridSpec spec{-1.0, 1.0, 101};
  Matrix xs(3, 1);
  xs(0, 0) = 0.0; xs(1, 0) = 0.5; xs(2, 0) = -0.5;
  // targets on grid points
  std::vector<double> ys{-1.0, 0.0, 0.02};
  const NllResult r = nll_grid(m, EnergyKind::joint_mlp, xs, ys, spec);
  CHECK(r.excluded == 0);
  CHECK(r.used == 3);
  CHECK(r.nll == Catch::Approx(std::log(101.0)).epsilon(1e-12));
}

TEST_CASE("off-grid targets are excluded and counted") {
  const EbmModel m = constant_energy_model();
  const GridSpec spec{-1.0, 1.0, 11};
  Matrix xs(2, 1);
  std::vector<double> ys{0.0, 5.0};
  const NllResult r = nll_grid(m, EnergyKind::joint_mlp, xs, ys, spec);
  CHECK(r.excluded == 1);
  CHECK(r.used == 1);
}

TEST_CASE("nll on self-samples approaches the model entropy") {
  Rng rng(19);
  EbmModel m = make_joint_model(1, 6, 6, rng);
  const double x = 0.25;
  const GridSpec spec{-3.0, 3.0, 256};
  const DensityGrid g = model_density(m, EnergyKind::joint_mlp, {&x, 1}, spec);
  double entropy = 0.0;
  for (double v : g.mass)
    if (v > 0) entropy -= v * std::log(v);
  // draw cell indices from the mass distribution; targets sit on the grid
  const std::size_t n = 10000;
  Matrix xs(n, 1);
  std::vector<double> ys(n);
  Rng sampler(20);
  double var_accum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = sampler.uniform();
    double acc = 0.0;
    std::size_t cell = g.n_points - 1;
    for (std::size_t k = 0; k < g.n_points; ++k) {
      acc += g.mass[k];
      if (u <= acc) {
        cell = k;
        break;
      }
    }
    xs(i, 0) = x;
    ys[i] = g.point(cell);
    const double nl = -std::log(g.mass[cell]);
    var_accum += (nl - entropy) * (nl - entropy);
  }
  const double mc_sd = std::sqrt(var_accum / static_cast<double>(n));
  const NllResult r = nll_grid(m, EnergyKind::joint_mlp, xs, ys, spec);
  CHECK(r.nll == Catch::Approx(entropy)
                     .margin(4.0 * mc_sd / std::sqrt(static_cast<double>(n)) +
                             1e-9));
}

TEST_CASE("kl is stable under grid refinement on a trained model") {
  const Dataset data = gen_dataset_a(400, 2);
  TrainSettings ts;
  ts.kind = EnergyKind::joint_mlp;
  ts.nce.sigma1 = 0.2;
  ts.nce.m_samples = 64;
  ts.nce.epochs = 8;
  ts.seed = 1;
  const TrainReport rep = train(ts, data.x_matrix(), data.y);
  auto mean_kl = [&](std::size_t n_points) {
    const GridSpec grid = make_grid_spec(data.y, 3.0, n_points);
    double sum = 0.0;
    for (int j = 0; j < 20; ++j) {
      const double x = -3.0 + 6.0 * (j + 0.5) / 20.0;
      const DensityGrid truth = density_from_pdf(
          [&](double y) { return true_conditional_pdf(GeneratorId::a, x, y); },
          grid);
      const DensityGrid fit =
          model_density(rep.model, ts.kind, {&x, 1}, grid);
      sum += kl_divergence_grid(truth, fit);
    }
    return sum / 20.0;
  };
  const double k1 = mean_kl(1024);
  const double k2 = mean_kl(2048);
  CHECK(std::fabs(k1 - k2) / std::max(k1, k2) < 0.01);
}
