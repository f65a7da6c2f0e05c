#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "ebmdiv/dataio.hpp"
#include "ebmdiv/evaluation.hpp"
#include "ebmdiv/run_config.hpp"

using namespace ebmdiv;

namespace {

std::filesystem::path tmp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() /
         ("ebmdiv_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST_CASE("dataset A contract") {
  const Dataset d = gen_dataset_a(2000, 0);
  REQUIRE(d.size() == 2000);
  for (double x : d.x) {
    CHECK(x >= -3.0);
    CHECK(x <= 3.0);
  }
  const Dataset again = gen_dataset_a(2000, 0);
  CHECK(d.x == again.x);
  CHECK(d.y == again.y);
  const Dataset other = gen_dataset_a(2000, 1);
  CHECK(d.y != other.y);

  // analytic conditional mean at x = -1 is sin(-2)
  CHECK(dataset_a_mean(-1.0) ==
        Catch::Approx(-0.9092974268256817).epsilon(1e-15));
  // standardized residuals have mean about 0
  double z_sum = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    z_sum += (d.y[i] - dataset_a_mean(d.x[i])) / dataset_a_sd(d.x[i]);
  CHECK(std::fabs(z_sum / static_cast<double>(d.size())) < 3.0 / std::sqrt(2000.0));
}

TEST_CASE("dataset B contract") {
  const Dataset d = gen_dataset_b(1700, 0);
  REQUIRE(d.size() == 1700);
  for (double x : d.x) {
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
  }
  // branch frequencies about one half
  std::size_t upper = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double du = std::fabs(d.y[i] - 2.0 * d.x[i]);
    const double dl = std::fabs(d.y[i] - (-2.0 * d.x[i] + 1.0));
    if (du < dl) ++upper;
  }
  const double frac = static_cast<double>(upper) / 1700.0;
  CHECK(std::fabs(frac - 0.5) < 3.0 / std::sqrt(1700.0) + 0.02);

  // bimodal density at x = 0.5: modes near 1.0 and 0.0
  CHECK(true_conditional_pdf(GeneratorId::b, 0.5, 1.0) >
        100.0 * true_conditional_pdf(GeneratorId::b, 0.5, 0.5));
  CHECK(true_conditional_pdf(GeneratorId::b, 0.5, 0.0) >
        100.0 * true_conditional_pdf(GeneratorId::b, 0.5, 0.5));
}

TEST_CASE("analytic densities integrate to one on the evaluation grid") {
  for (GeneratorId gen : {GeneratorId::a, GeneratorId::b}) {
    const Dataset d = gen == GeneratorId::a ? gen_dataset_a(1000, 3)
                                            : gen_dataset_b(1000, 3);
    const GridSpec grid = make_grid_spec(d.y, 3.0, 2048);
    const double dy =
        (grid.y_hi - grid.y_lo) / static_cast<double>(grid.n_points - 1);
    for (double x : {d.x[0], d.x[10], d.x[500]}) {
      double integral = 0.0;
      for (std::size_t i = 0; i < grid.n_points; ++i) {
        const double y = grid.y_lo + dy * static_cast<double>(i);
        const double w = (i == 0 || i == grid.n_points - 1) ? 0.5 : 1.0;
        integral += w * true_conditional_pdf(gen, x, y);
      }
      CHECK(integral * dy == Catch::Approx(1.0).margin(1e-4));
    }
  }
}

TEST_CASE("csv round trip is exact") {
  Dataset d = gen_dataset_a(128, 9);
  const auto path = tmp_file("roundtrip.csv");
  save_csv(d, path.string());
  const Dataset back = load_csv(path.string());
  REQUIRE(back.size() == d.size());
  CHECK(back.x == d.x);
  CHECK(back.y == d.y);
  std::filesystem::remove(path);
}

TEST_CASE("csv error handling") {
  const auto path = tmp_file("bad.csv");
  {
    std::ofstream out(path);
    out << "x,y\n";
  }
  CHECK_THROWS_AS(load_csv(path.string()), IoError);

  {
    std::ofstream out(path);
    out << "x,y\n";
    for (int i = 2; i <= 6; ++i) out << i << "," << i << "\n";
    out << "0.5,oops\n";  // line 7
  }
  try {
    load_csv(path.string());
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("line 7") != std::string::npos);
  }
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_csv((path.string() + ".missing")), IoError);

  {
    std::ofstream out(path);
    out << "a,b\n1,2\n";
  }
  CHECK_THROWS_AS(load_csv(path.string()), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("train/heldout split is a disjoint cover") {
  const Dataset d = gen_dataset_a(100, 4);
  const auto [tr, ho] = split_train_heldout(d, 0.8, 11);
  CHECK(tr.size() == 80);
  CHECK(ho.size() == 20);
  std::vector<double> all = tr.x;
  all.insert(all.end(), ho.x.begin(), ho.x.end());
  std::vector<double> orig = d.x;
  std::sort(all.begin(), all.end());
  std::sort(orig.begin(), orig.end());
  CHECK(all == orig);
  CHECK(tr.split == "train");
  CHECK(ho.split == "heldout");
}

TEST_CASE("run config round trips") {
  RunConfig c;
  c.generator = GeneratorId::b;
  c.n = 1700;
  c.data_seed = 5;
  c.seed = 42;
  c.kind = EnergyKind::e2_regression;
  c.nce.sigma1 = 0.05;
  c.nce.m_samples = 256;
  c.nce.epochs = 30;
  c.reg.beta = 1e-12;
  c.tau = 0.9;
  c.out_dir = "/tmp/somewhere";
  c.run_id = "case";
  const RunConfig back = parse_run_config(serialize_run_config(c));
  CHECK(back.generator == c.generator);
  CHECK(back.n == c.n);
  CHECK(back.data_seed == c.data_seed);
  CHECK(back.seed == c.seed);
  CHECK(back.kind == c.kind);
  CHECK(back.nce.sigma1 == c.nce.sigma1);
  CHECK(back.nce.m_samples == c.nce.m_samples);
  CHECK(back.nce.epochs == c.nce.epochs);
  CHECK(back.reg.beta == c.reg.beta);
  CHECK(back.tau == c.tau);
  CHECK(back.out_dir == c.out_dir);
  CHECK(back.run_id == c.run_id);
}

TEST_CASE("run config parse details") {
  const RunConfig c = parse_run_config(
      "# comment line\n"
      "\n"
      "dataset.generator = a   # trailing comment\n"
      "nce.sigma1 = 0.2\n");
  CHECK(c.generator == GeneratorId::a);
  CHECK(c.nce.sigma1 == 0.2);
  CHECK(c.nce.sigma2_value() == Catch::Approx(1.6));

  try {
    parse_run_config("nce.sigma1 = 0.1\nwhat.is.this = 3\n");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("what.is.this") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_run_config("nce.sigma1 = abc\n"), IoError);
  CHECK_THROWS_AS(parse_run_config("no equals sign\n"), IoError);
}
