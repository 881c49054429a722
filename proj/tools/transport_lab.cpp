// transport-lab: config-driven runner for the transport estimators.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "translab/experiments.hpp"

namespace {

int run_command(const std::string& config_path, const std::optional<std::string>& out,
                const std::optional<std::uint64_t>& seed,
                const std::optional<int>& workers) {
  auto cfg = translab::ExperimentConfig::load(config_path);
  if (seed) cfg.set_seed(*seed);
  const std::filesystem::path dir = out ? *out : cfg.output;
  const int w = workers ? *workers : cfg.workers;
  const auto outcome = translab::run_experiment(cfg, dir, w);
  for (const auto& f : outcome.files) std::cout << f.string() << '\n';
  if (!outcome.failures.empty()) {
    for (const auto& f : outcome.failures) std::cerr << "fit failed: " << f << '\n';
    return 3;
  }
  return 0;
}

int oracle_command(const std::string& config_path) {
  const auto cfg = translab::ExperimentConfig::load(config_path);
  const auto model = cfg.model.build();
  if (model.dim() != 1) {
    if (model.kind() == translab::PotentialKind::Zero) {
      std::cout << "free_langevin_mobility," << translab::fmt(translab::free_langevin_mobility(cfg.params))
                << '\n';
      return 0;
    }
    std::cerr << "model.potential: no oracle for this model\n";
    return 2;
  }
  const auto n = static_cast<std::size_t>(cfg.grid_n);
  const double beta = cfg.params.beta;
  std::cout << "potential,beta,eta,grid_n,steady_velocity\n";
  for (double eta : cfg.eta_grid)
    std::cout << cfg.model.potential << ',' << translab::fmt(beta) << ','
              << translab::fmt(eta) << ',' << cfg.grid_n << ','
              << translab::fmt(translab::steady_velocity_1d(model, eta, n, beta)) << '\n';
  std::cout << "mobility_oracle," << translab::fmt(translab::mobility_oracle_1d(model, n, beta))
            << '\n';
  std::cout << "gk_mobility,"
            << translab::fmt(translab::overdamped_mobility_gk_1d(model, beta, n)) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transport coefficient estimation for Langevin dynamics"};
  app.require_subcommand(0, 1);
  bool version = false;
  app.add_flag("--version", version, "Print the config schema version");

  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", config, "Config file (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "Output directory (overrides config 'output')");
  run->add_option("--seed", seed, "Seed (overrides config 'seed')");
  run->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  std::string oracle_config;
  auto* oracle = app.add_subcommand("oracle", "Print oracle values for a config's model");
  oracle->add_option("config", oracle_config, "Config file (JSON)")
      ->required()
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  if (version) {
    std::cout << "transport-lab schema " << translab::kSchemaVersion << '\n';
    return 0;
  }
  try {
    if (*run) return run_command(config, out, seed, workers);
    if (*oracle) return oracle_command(oracle_config);
  } catch (const translab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const translab::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  std::cout << app.help();
  return 1;
}
