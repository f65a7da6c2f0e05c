// Exercises the installed CLI binary end to end through a shell, checking
// the documented exit codes and artifact layout.
#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ebmdiv/run_config.hpp"

using namespace ebmdiv;

namespace {

const std::string cli = EBMDIV_CLI_PATH;

std::string fresh_dir(const std::string& tag) {
  const auto p = std::filesystem::temp_directory_path() /
                 ("ebmdiv_cli_" + std::to_string(::getpid()) + "_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

int run_cli(const std::string& args) {
  const std::string cmd = cli + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// drop "# meta:" lines before comparing reruns
std::string strip_meta(const std::string& text) {
  std::istringstream in(text);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("# meta:", 0) != 0) out << line << "\n";
  return out.str();
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

void write_tiny_config(const std::string& path, const std::string& out_dir,
                       const std::string& run_id) {
  RunConfig c;
  c.generator = GeneratorId::a;
  c.n = 120;
  c.seed = 3;
  c.nce.sigma1 = 0.2;
  c.nce.m_samples = 8;
  c.nce.epochs = 2;
  c.grid_points = 128;
  c.n_test = 40;
  c.n_draws = 200;
  c.out_dir = out_dir;
  c.run_id = run_id;
  save_run_config(c, path);
}

}  // namespace

TEST_CASE("gen writes header plus n rows") {
  const std::string dir = fresh_dir("gen");
  const std::string out = dir + "/a.csv";
  CHECK(run_cli("gen --dataset a --n 2000 --seed 0 --out " + out) == 0);
  CHECK(count_lines(slurp(out)) == 2001);

  // re-running is byte-identical
  const std::string first = slurp(out);
  CHECK(run_cli("gen --dataset a --n 2000 --seed 0 --out " + out) == 0);
  CHECK(slurp(out) == first);
  std::filesystem::remove_all(dir);
}

TEST_CASE("usage errors exit with 64") {
  CHECK(run_cli("gen --dataset a --n 100") == 64);  // missing --out
  CHECK(run_cli("gen --dataset a --n 0 --out /tmp/x.csv") == 64);
  CHECK(run_cli("gen --dataset q --n 10 --out /tmp/x.csv") == 64);
  CHECK(run_cli("") == 64);
  CHECK(run_cli("frobnicate") == 64);
}

TEST_CASE("gen reports I/O failures with exit 2") {
  CHECK(run_cli("gen --dataset a --n 10 --out /nonexistent_dir/x.csv") == 2);
}

TEST_CASE("train then eval then bounds") {
  const std::string dir = fresh_dir("roundtrip");
  write_tiny_config(dir + "/run.cfg", dir, "case");
  CHECK(run_cli("train --config " + dir + "/run.cfg") == 0);
  const std::string run = dir + "/case";
  CHECK(std::filesystem::exists(run + "/model.txt"));

  // determinism: rerun and compare artifacts modulo the meta line
  const std::string report1 = slurp(run + "/train_report.csv");
  const std::string model1 = slurp(run + "/model.txt");
  CHECK(run_cli("train --config " + dir + "/run.cfg") == 0);
  CHECK(strip_meta(slurp(run + "/train_report.csv")) == strip_meta(report1));
  CHECK(slurp(run + "/model.txt") == model1);

  CHECK(run_cli("eval --run " + run) == 0);
  const std::string ev = slurp(run + "/eval.csv");
  CHECK(ev.find("kl,nll") == 0);
  CHECK(ev.find("na") == std::string::npos);  // generator data has a KL value

  CHECK(run_cli("bounds --run " + run + " --theorem t2") == 0);
  const std::string rep = slurp(run + "/bound_report.csv");
  CHECK(rep.find("theorem,") == 0);
  CHECK(rep.find("\nt2,") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("missing artifacts exit with the documented codes") {
  const std::string dir = fresh_dir("missing");
  CHECK(run_cli("train --config " + dir + "/nonexistent.cfg") == 2);

  write_tiny_config(dir + "/run.cfg", dir, "case");
  REQUIRE(run_cli("train --config " + dir + "/run.cfg") == 0);
  std::filesystem::remove(dir + "/case/model.txt");
  CHECK(run_cli("eval --run " + dir + "/case") == 3);
  CHECK(run_cli("bounds --run " + dir + "/case") == 3);
  std::filesystem::remove_all(dir);
}

TEST_CASE("sweep emits tables and the baseline row leads") {
  const std::string dir = fresh_dir("sweep");
  write_tiny_config(dir + "/base.cfg", dir, "");
  CHECK(run_cli("sweep --config " + dir + "/base.cfg --out " + dir +
                "/sweep --betas 0,1e-12 --sigmas 0.2 --seeds 2 --jobs 2") == 0);
  const std::string table = slurp(dir + "/sweep/sweep_table.csv");
  CHECK(table.find("approach,sigma1=0.2\nbeta=0,") != std::string::npos);
  const std::string cells = slurp(dir + "/sweep/sweep_cells.csv");
  CHECK(count_lines(cells) == 3);  // header + 2 cells
  const std::string runs = slurp(dir + "/sweep/sweep_runs.csv");
  CHECK(count_lines(runs) == 5);  // header + 4 runs
  std::filesystem::remove_all(dir);
}

TEST_CASE("EBMDIV_OUT supplies the default output root") {
  const std::string dir = fresh_dir("envout");
  RunConfig c;
  c.generator = GeneratorId::a;
  c.n = 80;
  c.seed = 2;
  c.nce.m_samples = 4;
  c.nce.epochs = 1;
  c.grid_points = 64;
  c.n_test = 20;
  c.run_id = "envcase";  // out deliberately unset
  save_run_config(c, dir + "/run.cfg");
  const std::string cmd = "EBMDIV_OUT=" + dir + "/root " + cli +
                          " train --config " + dir + "/run.cfg >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(std::filesystem::exists(dir + "/root/envcase/model.txt"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("sweep reports partial failure with exit 1") {
  const std::string dir = fresh_dir("sweepfail");
  RunConfig c;
  c.generator = GeneratorId::none;
  c.csv_path = dir + "/missing.csv";
  c.nce.epochs = 1;
  c.nce.m_samples = 4;
  save_run_config(c, dir + "/base.cfg");
  CHECK(run_cli("sweep --config " + dir + "/base.cfg --out " + dir +
                "/sweep --betas 0 --sigmas 0.1 --seeds 1 --jobs 1") == 1);
  std::filesystem::remove_all(dir);
}
