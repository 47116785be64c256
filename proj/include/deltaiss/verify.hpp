#pragma once

// Independent certification of a trained network: the scenario optimum
// eta*_S over exhaustive sample pairs, the validity margin eta*_S + L eps,
// a refined-grid check of the Lyapunov conditions, and a trajectory
// falsifier for the incremental stability property itself.

#include "deltaiss/lipschitz.hpp"
#include "deltaiss/network.hpp"
#include "deltaiss/sampling.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cstdint>
#include <optional>
#include <string>

namespace deltaiss {

/// Constraint families: 0 = lower bound (-V + alpha1), 1 = upper bound
/// (V - alpha2), 2 = decrease (V(f,f) - V + alpha3 - sigma).
inline constexpr int kFamilies = 3;

struct Witness {
  int family = 0;
  std::size_t q = 0, r = 0;        // state sample indices
  std::size_t p = 0, s = 0;        // input sample indices (decrease family only)
  double residual = -std::numeric_limits<double>::infinity();
  bool valid = false;
};

struct ScpOptions {
  /// Cap on constraint evaluations.
  double budget = 1e9;
  /// Above the budget, rebuild coarser grid nets (larger radius) instead of failing.
  bool allow_coarsening = false;
  int threads = 1;
  /// Stop as soon as any residual exceeds this value.
  std::optional<double> stop_above;
};

struct ScpResult {
  double eta_star = -std::numeric_limits<double>::infinity();
  std::array<Witness, kFamilies> worst;
  /// False if the pass stopped early on stop_above.
  bool complete = true;
  /// Size of the full pass, N^2 + N^2 M^2, whether or not it stopped early.
  double evaluations = 0.0;
  bool coarsened = false;
  /// Radii and sizes of the sets actually evaluated.
  double state_radius = 0.0;
  double input_radius = 0.0;
  std::size_t n_states = 0;
  std::size_t n_inputs = 0;
};

/// Maximum over all pairs and all three families of the scenario constraint
/// left-hand sides. Pairs are streamed, never materialized. Ties resolve to
/// the lexicographically smallest index. Throws BudgetExceeded when over
/// budget and coarsening is not allowed.
ScpResult scp_residual(const LyapunovNet& net, const SampleSet& states, const SampleSet& inputs,
                       const DiscreteSystem& sys, const Templates& templates,
                       const ScpOptions& options = {});

/// Recomputes one witness residual with the same arithmetic as scp_residual.
/// The sets must be the ones the witness indexes.
double witness_residual(const LyapunovNet& net, const SampleSet& states, const SampleSet& inputs,
                        const DiscreteSystem& sys, const Templates& templates, const Witness& w);

enum class Verdict { Certified, NotCertified };
std::string to_string(Verdict v);

struct ValidityResult {
  double margin = 0.0;
  Verdict verdict = Verdict::NotCertified;
};

/// margin = eta_star + L eps; certified iff margin <= 0 and psd_ok.
ValidityResult validity_check(double eta_star, double L, double eps, bool psd_ok);

struct CertificationReport {
  double eta_star = 0.0;
  double L = 0.0;
  double eps = 0.0;
  double margin = 0.0;
  bool psd_ok = false;
  double min_eig = 0.0;
  std::array<Witness, kFamilies> worst;
  bool coarsened = false;
  std::size_t n_states = 0;
  std::size_t n_inputs = 0;
  double evaluations = 0.0;
  Verdict verdict = Verdict::NotCertified;
};

/// scp_residual + P check + validity_check. eps is raised to the radius of
/// the sets actually evaluated when coarsening kicked in.
CertificationReport certify(const LyapunovNet& net, const SampleSet& states,
                            const SampleSet& inputs, const DiscreteSystem& sys,
                            const Templates& templates, double L, double eps,
                            const ScpOptions& options = {});

std::string to_json(const CertificationReport& report, int indent = 2);

struct GridOracleResult {
  /// Worst k1|dx|^g1 - V, V - k2|dx|^g2 and V(f,f) - V + alpha3 - sigma.
  std::array<double, kFamilies> worst{};
  std::array<Witness, kFamilies> witness;
  std::size_t n_states = 0;
  std::size_t n_inputs = 0;
  double evaluations = 0.0;
  double max_residual() const { return std::max({worst[0], worst[1], worst[2]}); }
};

/// Evaluates the Lyapunov conditions on grids `refine` times finer than the
/// given training sets, with a plain forward pass (independent of the
/// scp_residual evaluation path). Throws BudgetExceeded above budget.
GridOracleResult grid_oracle(const LyapunovNet& net, const DiscreteSystem& sys,
                             const SampleSet& states, const SampleSet& inputs,
                             const Templates& templates, int refine, double budget = 1e9);

struct FalsificationReport {
  int trials = 0;
  int horizon = 0;
  /// Largest one-step increase of the gap under identical inputs.
  double max_gap_growth = 0.0;
  /// Largest terminal/initial gap ratio under identical inputs.
  double contraction_ratio = 0.0;
  /// Calibrated input gain c: 1.5 x the largest gap / |du| seen from equal
  /// initial states.
  double input_gain = 0.0;
  /// max over mixed trials of gap_T - ratio * gap_0 - c |du|.
  double worst_excess = 0.0;
  /// Trajectories that left the state box (they are truncated, not discarded).
  int exits = 0;
  bool violation = false;
};

/// Simulates random trajectory pairs with constant inputs. A falsifier only:
/// no violation is evidence, not proof.
FalsificationReport falsify_delta_iss(const DiscreteSystem& sys, int n_trials, int horizon,
                                      std::uint64_t seed, double tolerance = 1e-12);

}  // namespace deltaiss
