#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ebmdiv/dataio.hpp"
#include "ebmdiv/energy.hpp"
#include "ebmdiv/errors.hpp"
#include "ebmdiv/training.hpp"

namespace ebmdiv {

// Full experiment description. Serialized as a flat key-value file with
// dotted keys, '#' comments, UTF-8.
struct RunConfig {
  GeneratorId generator = GeneratorId::a;
  std::string csv_path;
  std::size_t n = 2000;
  std::uint64_t data_seed = 0;
  double train_frac = 0.8;
  std::size_t n_test = 0;  // 0: generator default (a: 2000, b: 1900)

  std::uint64_t seed = 0;
  EnergyKind kind = EnergyKind::joint_mlp;
  std::size_t hidden = 10;
  std::size_t d_features = 10;

  NceConfig nce;
  RegularizerConfig reg;

  std::size_t grid_points = 1024;
  double grid_pad = 3.0;

  double tau = 0.95;
  double delta = 0.05;
  std::size_t n_draws = 1000;

  std::string out_dir;
  std::string run_id;
};

namespace detail {

inline double cfg_num(const std::string& v, std::size_t line_no) {
  const char* s = v.c_str();
  char* end = nullptr;
  const double x = std::strtod(s, &end);
  if (end == s || *end != '\0')
    throw IoError("config line " + std::to_string(line_no) +
                  ": not a number: '" + v + "'");
  return x;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError("config line " + std::to_string(line_no) +
                    ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    auto num = [&] { return detail::cfg_num(val, line_no); };
    if (key == "dataset.generator") c.generator = generator_from_string(val);
    else if (key == "dataset.csv_path") c.csv_path = val;
    else if (key == "dataset.n") c.n = static_cast<std::size_t>(num());
    else if (key == "dataset.seed") c.data_seed = static_cast<std::uint64_t>(num());
    else if (key == "dataset.train_frac") c.train_frac = num();
    else if (key == "dataset.n_test") c.n_test = static_cast<std::size_t>(num());
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(num());
    else if (key == "energy.kind") c.kind = energy_kind_from_string(val);
    else if (key == "model.hidden") c.hidden = static_cast<std::size_t>(num());
    else if (key == "model.features") c.d_features = static_cast<std::size_t>(num());
    else if (key == "nce.sigma1") c.nce.sigma1 = num();
    else if (key == "nce.sigma2") c.nce.sigma2 = num();
    else if (key == "nce.m_samples") c.nce.m_samples = static_cast<std::size_t>(num());
    else if (key == "nce.batch_size") c.nce.batch_size = static_cast<std::size_t>(num());
    else if (key == "nce.epochs") c.nce.epochs = static_cast<std::size_t>(num());
    else if (key == "nce.lr") c.nce.lr = num();
    else if (key == "reg.beta") c.reg.beta = num();
    else if (key == "reg.feature_tap") c.reg.feature_tap = static_cast<int>(num());
    else if (key == "grid.n_points") c.grid_points = static_cast<std::size_t>(num());
    else if (key == "grid.pad_sigmas") c.grid_pad = num();
    else if (key == "bounds.tau") c.tau = num();
    else if (key == "bounds.delta") c.delta = num();
    else if (key == "bounds.n_draws") c.n_draws = static_cast<std::size_t>(num());
    else if (key == "out") c.out_dir = val;
    else if (key == "run.id") c.run_id = val;
    else
      throw IoError("config line " + std::to_string(line_no) +
                    ": unknown key '" + key + "'");
  }
  return c;
}

inline std::string serialize_run_config(const RunConfig& c) {
  std::ostringstream out;
  out << "# ebmdiv run config\n";
  out << "dataset.generator = " << to_string(c.generator) << "\n";
  if (!c.csv_path.empty()) out << "dataset.csv_path = " << c.csv_path << "\n";
  out << "dataset.n = " << c.n << "\n";
  out << "dataset.seed = " << c.data_seed << "\n";
  out << "dataset.train_frac = " << format_g17(c.train_frac) << "\n";
  out << "dataset.n_test = " << c.n_test << "\n";
  out << "seed = " << c.seed << "\n";
  out << "energy.kind = " << to_string(c.kind) << "\n";
  out << "model.hidden = " << c.hidden << "\n";
  out << "model.features = " << c.d_features << "\n";
  out << "nce.sigma1 = " << format_g17(c.nce.sigma1) << "\n";
  out << "nce.sigma2 = " << format_g17(c.nce.sigma2) << "\n";
  out << "nce.m_samples = " << c.nce.m_samples << "\n";
  out << "nce.batch_size = " << c.nce.batch_size << "\n";
  out << "nce.epochs = " << c.nce.epochs << "\n";
  out << "nce.lr = " << format_g17(c.nce.lr) << "\n";
  out << "reg.beta = " << format_g17(c.reg.beta) << "\n";
  out << "reg.feature_tap = " << c.reg.feature_tap << "\n";
  out << "grid.n_points = " << c.grid_points << "\n";
  out << "grid.pad_sigmas = " << format_g17(c.grid_pad) << "\n";
  out << "bounds.tau = " << format_g17(c.tau) << "\n";
  out << "bounds.delta = " << format_g17(c.delta) << "\n";
  out << "bounds.n_draws = " << c.n_draws << "\n";
  if (!c.out_dir.empty()) out << "out = " << c.out_dir << "\n";
  if (!c.run_id.empty()) out << "run.id = " << c.run_id << "\n";
  return out.str();
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

inline void save_run_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << serialize_run_config(c);
  if (!out) throw IoError("write failed: " + path);
}

// Build the dataset named by the config (generator or CSV file).
inline Dataset config_dataset(const RunConfig& c) {
  switch (c.generator) {
    case GeneratorId::a: return gen_dataset_a(c.n, c.data_seed);
    case GeneratorId::b: return gen_dataset_b(c.n, c.data_seed);
    case GeneratorId::none: return load_csv(c.csv_path);
  }
  throw ContractError("config_dataset: bad generator");
}

inline std::size_t config_n_test(const RunConfig& c) {
  if (c.n_test > 0) return c.n_test;
  return c.generator == GeneratorId::b ? 1900 : 2000;
}

}  // namespace ebmdiv
