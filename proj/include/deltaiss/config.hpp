#pragma once

// Run configuration: a flat `key = value` text file with `#` comments. Every
// field has a default, so an empty file is valid for the built-in systems.

#include "deltaiss/dynamics.hpp"
#include "deltaiss/training.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace deltaiss {

enum class LipschitzMode { Point, Ci95 };

struct RunConfig {
  /// scalar | dcmotor | linear | external
  std::string system = "scalar";

  std::optional<double> tau;  // scalar default 0.01, dcmotor default 0.001
  double a = -1.0;            // scalar drift coefficient
  double Ra = 1.0, La = 0.01, J = 0.01, B = 1.0, kb = 0.01;
  double gain = 0.5;  // linear test system x+ = gain * x
  std::optional<Vector> state_lower, state_upper, input_lower, input_upper;
  /// Shell command for system = external; speaks `x u` -> `x_next` per line.
  std::string external_command;

  Hyperparams hp;
  std::optional<double> eps_x, eps_u;  // sample radii; default hp.eps

  LipschitzMode lipschitz_mode = LipschitzMode::Ci95;
  /// Fixed constants; when both are set no estimation is run.
  std::optional<double> lipschitz_x, lipschitz_u;
  int lip_batches = 50;
  int lip_batch_size = 500;
  double lip_delta = 1e-3;

  bool allow_coarsening = false;
  int refine = 0;  // 0 = no grid oracle during certify
  double grid_budget = 1e8;

  int horizon = 200;
  std::vector<Vector> sim_x0;  // initial states; default: box corners
  std::vector<Vector> sim_u;   // constant inputs; default: box corners
  int falsify_trials = 100;

  /// Master seed; per-purpose seeds default to values derived from it.
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> seed_train, seed_lipschitz, seed_falsify;

  std::string out_dir = "run";
  bool deterministic = false;

  std::uint64_t train_seed() const;
  std::uint64_t lipschitz_seed() const;
  std::uint64_t falsify_seed() const;
  double state_eps() const { return eps_x.value_or(hp.eps); }
  double input_eps() const { return eps_u.value_or(hp.eps); }
};

/// Applies one `key = value` assignment. Throws std::invalid_argument on an
/// unknown key or a malformed value.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Parses a whole file; errors name the origin and line number.
RunConfig parse_config(std::istream& in, const std::string& origin = "<config>",
                       RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});

/// Every key with its current value; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& cfg);

/// Builds the configured system. External systems need explicit boxes.
DiscreteSystem make_system(const RunConfig& cfg);

}  // namespace deltaiss
