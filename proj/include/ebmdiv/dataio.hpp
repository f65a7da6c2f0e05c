#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ebmdiv/errors.hpp"
#include "ebmdiv/matrix.hpp"
#include "ebmdiv/rng.hpp"

namespace ebmdiv {

enum class GeneratorId { none, a, b };

inline const char* to_string(GeneratorId g) {
  switch (g) {
    case GeneratorId::none: return "csv";
    case GeneratorId::a: return "a";
    case GeneratorId::b: return "b";
  }
  return "?";
}

inline GeneratorId generator_from_string(const std::string& s) {
  if (s == "a") return GeneratorId::a;
  if (s == "b") return GeneratorId::b;
  if (s == "csv" || s == "none") return GeneratorId::none;
  throw ContractError("unknown generator: " + s);
}

// 1-D regression dataset; when produced by a generator the analytic
// conditional density is available through true_conditional_pdf.
struct Dataset {
  std::vector<double> x, y;
  GeneratorId gen = GeneratorId::none;
  std::string split;  // train / heldout / test / ""

  std::size_t size() const { return x.size(); }

  Matrix x_matrix() const {
    Matrix m(x.size(), 1);
    for (std::size_t i = 0; i < x.size(); ++i) m(i, 0) = x[i];
    return m;
  }
};

inline double normal_pdf(double y, double mean, double sd) {
  const double z = (y - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

// Dataset A: heteroscedastic sinusoid on x in [-3, 3].
inline double dataset_a_mean(double x) {
  return std::sin(2.0 * x) * (x > 0.0 ? 1.5 : 1.0);
}
inline double dataset_a_sd(double x) { return x > 0.0 ? 0.40 : 0.15; }

inline Dataset gen_dataset_a(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ContractError("gen_dataset_a: n >= 1");
  Rng rng(mix_seed(seed, 0xDA7A));
  Dataset d;
  d.gen = GeneratorId::a;
  d.x.resize(n);
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(-3.0, 3.0);
    d.x[i] = x;
    d.y[i] = dataset_a_mean(x) + dataset_a_sd(x) * rng.normal();
  }
  return d;
}

// Dataset B: two crossing branches on x in [0, 1], picked with equal
// probability; sharp bimodal conditional density.
inline Dataset gen_dataset_b(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ContractError("gen_dataset_b: n >= 1");
  Rng rng(mix_seed(seed, 0xDB7B));
  Dataset d;
  d.gen = GeneratorId::b;
  d.x.resize(n);
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(0.0, 1.0);
    const bool up = rng.uniform() < 0.5;
    const double mean = up ? 2.0 * x : -2.0 * x + 1.0;
    d.x[i] = x;
    d.y[i] = mean + 0.05 * rng.normal();
  }
  return d;
}

inline double true_conditional_pdf(GeneratorId gen, double x, double y) {
  switch (gen) {
    case GeneratorId::a:
      return normal_pdf(y, dataset_a_mean(x), dataset_a_sd(x));
    case GeneratorId::b:
      return 0.5 * normal_pdf(y, 2.0 * x, 0.05) +
             0.5 * normal_pdf(y, -2.0 * x + 1.0, 0.05);
    case GeneratorId::none:
      throw ContractError("true_conditional_pdf: no analytic density for csv");
  }
  throw ContractError("true_conditional_pdf: bad generator");
}

// x range the generator draws from, used to place evaluation probes.
inline std::pair<double, double> generator_x_range(GeneratorId gen) {
  switch (gen) {
    case GeneratorId::a: return {-3.0, 3.0};
    case GeneratorId::b: return {0.0, 1.0};
    default: throw ContractError("generator_x_range: no generator");
  }
}

inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// CSV with header "x,y", 17-significant-digit floats, \n line endings.
inline void save_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "x,y\n";
  for (std::size_t i = 0; i < d.size(); ++i)
    out << format_g17(d.x[i]) << ',' << format_g17(d.y[i]) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

namespace detail {

inline double parse_double_field(const std::string& field,
                                 std::size_t line_no) {
  const char* s = field.c_str();
  char* end = nullptr;
  const double v = std::strtod(s, &end);
  while (end && *end == ' ') ++end;
  if (end == s || (end && *end != '\0'))
    throw IoError("line " + std::to_string(line_no) + ": not a number: '" +
                  field + "'");
  return v;
}

}  // namespace detail

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  Dataset d;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "x,y")
        throw IoError("line 1: expected header 'x,y', got '" + line + "'");
      continue;
    }
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos)
      throw IoError("line " + std::to_string(line_no) + ": expected 'x,y' row");
    d.x.push_back(detail::parse_double_field(line.substr(0, comma), line_no));
    d.y.push_back(detail::parse_double_field(line.substr(comma + 1), line_no));
  }
  if (line_no == 0) throw IoError("empty file: " + path);
  if (d.size() == 0) throw IoError("no data rows in " + path);
  return d;
}

// Seeded shuffle split; the two parts are disjoint and cover the input.
inline std::pair<Dataset, Dataset> split_train_heldout(const Dataset& d,
                                                       double train_frac,
                                                       std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw ContractError("split_train_heldout: frac in (0,1)");
  if (d.size() < 2) throw ContractError("split_train_heldout: need >= 2 rows");
  Rng rng(mix_seed(seed, 0x59717));
  const std::vector<std::size_t> order = rng.permutation(d.size());
  std::size_t k = static_cast<std::size_t>(
      train_frac * static_cast<double>(d.size()) + 0.5);
  k = std::min(std::max<std::size_t>(k, 1), d.size() - 1);
  Dataset tr, ho;
  tr.gen = ho.gen = d.gen;
  tr.split = "train";
  ho.split = "heldout";
  for (std::size_t i = 0; i < d.size(); ++i) {
    Dataset& dst = i < k ? tr : ho;
    dst.x.push_back(d.x[order[i]]);
    dst.y.push_back(d.y[order[i]]);
  }
  return {std::move(tr), std::move(ho)};
}

}  // namespace ebmdiv
