// ebmdiv command line: generate data, train, evaluate, verify bounds, and
// sweep the beta x sigma1 grid.
//
// Exit codes: 0 success, 64 usage, 2 I/O, 3 missing artifact, 1 sweep with
// failed runs (or any other error).

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ebmdiv/bounds.hpp"
#include "ebmdiv/dataio.hpp"
#include "ebmdiv/run_config.hpp"
#include "ebmdiv/runner.hpp"

namespace {

std::vector<double> parse_list(const std::string& csv) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    std::size_t comma = csv.find(',', pos);
    if (comma == std::string::npos) comma = csv.size();
    const std::string field = csv.substr(pos, comma - pos);
    char* end = nullptr;
    const double v = std::strtod(field.c_str(), &end);
    if (end == field.c_str() || *end != '\0')
      throw ebmdiv::ContractError("bad list entry: '" + field + "'");
    out.push_back(v);
    pos = comma + 1;
  }
  if (out.empty()) throw ebmdiv::ContractError("empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"energy-based models with a feature-diversity regularizer"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset CSV");
  std::string gen_dataset, gen_out;
  std::size_t gen_n = 2000;
  std::uint64_t gen_seed = 0;
  gen->add_option("--dataset", gen_dataset, "generator: a or b")
      ->required()
      ->check(CLI::IsMember({"a", "b"}));
  gen->add_option("--n", gen_n, "number of examples")
      ->required()
      ->check(CLI::Range(std::size_t{1}, std::size_t{100000000}));
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output CSV path")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a run from a config");
  std::string train_config;
  train_cmd->add_option("--config", train_config, "run config path")
      ->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate KL/NLL for a run");
  std::string eval_run;
  eval_cmd->add_option("--run", eval_run, "run directory")->required();

  // bounds
  auto* bounds_cmd =
      app.add_subcommand("bounds", "verify a generalization bound on a run");
  std::string bounds_run, bounds_theorem = "t2";
  double bounds_tau = 0.95, bounds_delta = 0.05;
  bounds_cmd->add_option("--run", bounds_run, "run directory")->required();
  bounds_cmd->add_option("--tau", bounds_tau, "diversity confidence tau")
      ->check(CLI::Range(1e-6, 1.0));
  bounds_cmd->add_option("--delta", bounds_delta, "bound failure probability")
      ->check(CLI::Range(1e-12, 0.999999));
  bounds_cmd->add_option("--theorem", bounds_theorem, "t1|t2|t3|t4")
      ->check(CLI::IsMember({"t1", "t2", "t3", "t4"}));

  // sweep
  auto* sweep_cmd =
      app.add_subcommand("sweep", "run the beta x sigma1 x seed grid");
  std::string sweep_config, sweep_out, sweep_betas, sweep_sigmas;
  std::size_t sweep_seeds = 20, sweep_jobs = 2;
  sweep_cmd->add_option("--config", sweep_config, "base run config")
      ->required();
  sweep_cmd->add_option("--out", sweep_out, "sweep output directory");
  sweep_cmd->add_option("--betas", sweep_betas,
                        "comma list of beta values (default 0,1e-11,1e-12,1e-13)");
  sweep_cmd->add_option("--sigmas", sweep_sigmas,
                        "comma list of sigma1 values (default 0.05,0.1,0.2)");
  sweep_cmd->add_option("--seeds", sweep_seeds, "seeds per cell")
      ->check(CLI::Range(std::size_t{1}, std::size_t{10000}));
  sweep_cmd->add_option("--jobs", sweep_jobs, "parallel runs")
      ->check(CLI::Range(std::size_t{1}, std::size_t{256}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 64;
  }

  try {
    if (gen->parsed()) {
      const ebmdiv::Dataset d = gen_dataset == "a"
                                    ? ebmdiv::gen_dataset_a(gen_n, gen_seed)
                                    : ebmdiv::gen_dataset_b(gen_n, gen_seed);
      ebmdiv::save_csv(d, gen_out);
      std::cout << "wrote " << d.size() << " rows to " << gen_out << "\n";
      return 0;
    }
    if (train_cmd->parsed()) {
      const ebmdiv::RunConfig cfg = ebmdiv::load_run_config(train_config);
      const ebmdiv::TrainOutcome out = ebmdiv::run_train(cfg);
      std::cout << "run " << out.cfg.run_id << ": " << out.report.epoch_loss.size()
                << " epochs";
      if (!out.report.epoch_loss.empty())
        std::cout << ", final loss " << out.report.epoch_loss.back();
      std::cout << ", artifacts in " << out.dir << "\n";
      return 0;
    }
    if (eval_cmd->parsed()) {
      const ebmdiv::EvalOutcome out = ebmdiv::run_eval(eval_run);
      std::cout << "kl: "
                << (std::isfinite(out.kl) ? std::to_string(out.kl)
                                          : std::string("na"))
                << ", nll: " << out.nll.nll << " (" << out.nll.used
                << " points, " << out.nll.excluded << " off grid)\n";
      return 0;
    }
    if (bounds_cmd->parsed()) {
      const ebmdiv::BoundReport rep = ebmdiv::run_bounds(
          bounds_run, bounds_tau, bounds_delta,
          ebmdiv::theorem_from_string(bounds_theorem));
      std::cout << ebmdiv::bound_report_text(rep);
      return 0;
    }
    if (sweep_cmd->parsed()) {
      const ebmdiv::RunConfig base = ebmdiv::load_run_config(sweep_config);
      ebmdiv::SweepSpec spec;
      if (!sweep_betas.empty()) spec.betas = parse_list(sweep_betas);
      if (!sweep_sigmas.empty()) spec.sigmas = parse_list(sweep_sigmas);
      spec.n_seeds = sweep_seeds;
      spec.jobs = sweep_jobs;
      std::string out_dir = sweep_out;
      if (out_dir.empty())
        out_dir = (base.out_dir.empty() ? ebmdiv::default_out_root()
                                        : base.out_dir) +
                  "/sweep";
      const ebmdiv::SweepOutcome out = ebmdiv::run_sweep(base, spec, out_dir);
      std::cout << out.rows.size() << " runs, " << out.failures
                << " failures, bounds " << (out.all_hold ? "hold" : "VIOLATED")
                << ", tables in " << out.out_dir << "\n";
      return out.failures > 0 ? 1 : 0;
    }
  } catch (const ebmdiv::ArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ebmdiv::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 64;
}
