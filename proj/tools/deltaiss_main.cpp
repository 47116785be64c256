// deltaiss: learn and certify neural incremental ISS Lyapunov functions.
//
//   deltaiss estimate --system scalar --out runs/lip
//   deltaiss train    --config configs/scalar.cfg --seed 3 --out runs/scalar
//   deltaiss certify  --config configs/scalar.cfg --model runs/scalar/model.txt --refine 3
//   deltaiss simulate --system scalar --out runs/sim
//   deltaiss falsify  --system dcmotor --out runs/falsify
//
// Exit codes: 0 success, 2 not converged / not certified / violation, 1 error.

#include "deltaiss/commands.hpp"
#include "deltaiss/config.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

struct CommonFlags {
  std::string config;
  std::string system;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool deterministic = false;
  std::string lipschitz_mode;
  std::optional<int> refine;
  std::string model;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key = value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--system", f.system, "scalar | dcmotor | linear | external");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--out", f.out, "run directory");
  cmd->add_flag("--deterministic", f.deterministic, "single-threaded, bit-reproducible run");
  cmd->add_option("--lipschitz-mode", f.lipschitz_mode, "point | ci95")
      ->check(CLI::IsMember({"point", "ci95"}));
}

deltaiss::RunConfig build_config(const CommonFlags& f) {
  deltaiss::RunConfig base;
  base.system.clear();
  deltaiss::RunConfig cfg = f.config.empty() ? base : deltaiss::load_config(f.config, base);
  if (!f.system.empty()) cfg.system = f.system;
  if (cfg.system.empty()) {
    throw CLI::ValidationError("--system", "no system given (use --system or a config file)");
  }
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (f.deterministic) cfg.deterministic = true;
  if (!f.lipschitz_mode.empty()) deltaiss::apply_setting(cfg, "lipschitz_mode", f.lipschitz_mode);
  if (f.refine) cfg.refine = *f.refine;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn and certify neural incremental ISS Lyapunov functions"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* estimate = app.add_subcommand("estimate", "estimate the system Lipschitz constants");
  auto* train = app.add_subcommand("train", "train a Lyapunov network");
  auto* certify = app.add_subcommand("certify", "certify a trained model");
  auto* simulate = app.add_subcommand("simulate", "write trajectory and gap CSVs");
  auto* falsify = app.add_subcommand("falsify", "search trajectories for stability violations");
  for (auto* cmd : {estimate, train, certify, simulate, falsify}) add_common(cmd, flags);
  certify->add_option("--model", flags.model, "model file")->required()->check(CLI::ExistingFile);
  certify->add_option("--refine", flags.refine, "also run the grid oracle this many times finer")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
    const deltaiss::RunConfig cfg = build_config(flags);
    if (*estimate) return deltaiss::cmd_estimate_lipschitz(cfg, std::cout, std::cerr);
    if (*train) return deltaiss::cmd_train(cfg, std::cout, std::cerr);
    if (*certify) return deltaiss::cmd_certify(cfg, flags.model, std::cout, std::cerr);
    if (*simulate) return deltaiss::cmd_simulate(cfg, std::cout, std::cerr);
    if (*falsify) return deltaiss::cmd_falsify(cfg, std::cout, std::cerr);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    app.exit(e);
    return deltaiss::kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return deltaiss::kExitError;
  }
  return deltaiss::kExitError;
}
