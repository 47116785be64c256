#pragma once

// Hinge losses encoding the scenario constraints, the log-det barrier that
// keeps P(theta, Lambda) positive definite, the validity hinge, and the
// training loop that stops only when every termination condition holds on
// the full sample set.

#include "deltaiss/lipschitz.hpp"
#include "deltaiss/network.hpp"
#include "deltaiss/sampling.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace deltaiss {

enum class OptimizerKind { Adam, Sgd };

struct Hyperparams {
  double c0 = 1.0;
  double c1 = 1.0;
  double c2 = 1.0;
  double cl = 0.01;
  Templates templates;
  double lipschitz_bound = 1.0;  // L_L, fixed a priori
  double eps = 0.004;
  std::vector<int> hidden{20};
  Activation activation = Activation::Tanh;
  double init_scale = 0.5;
  int n_ep = 1000;
  int n_b = 10;
  int batch_size = 256;
  double lr_net = 1e-3;
  double lr_eta = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  /// Full-set convergence check cadence, in epochs.
  int check_every = 50;
  /// Draw fresh batches every epoch instead of reusing the first draw.
  bool resample_batches = true;
  /// Stop (not converged) once this much wall time has elapsed; 0 = no limit.
  double max_wall_seconds = 0.0;
  /// Budget for the exhaustive scenario evaluation during convergence checks.
  double scp_budget = 1e9;
  int threads = 1;

  /// Throws std::invalid_argument on non-positive weights, rates or sizes.
  void validate() const;
};

struct LossBreakdown {
  double L0 = 0.0;
  double L1 = 0.0;
  double L2 = 0.0;
  double risk = 0.0;  // c0 L0 + c1 L1 + c2 L2
  double LP = 0.0;    // -cl log det P
  double Lv = 0.0;    // max(0, L eps + eta)
  double total() const { return risk + LP + Lv; }
};

double loss_L0(const LyapunovNet& net, double eta, const PairBatch& batch, const KTemplate& alpha1);
double loss_L1(const LyapunovNet& net, double eta, const PairBatch& batch, const KTemplate& alpha2);
/// Throws std::invalid_argument when the batch has no next states.
double loss_L2(const LyapunovNet& net, double eta, const PairBatch& batch, const KTemplate& alpha3,
               const KTemplate& sigma);
double lyapunov_risk(const LyapunovNet& net, double eta, const PairBatch& batch,
                     const Hyperparams& hp);
/// -cl log det P. Throws BarrierViolation when P is not PD.
double loss_P(const LyapunovNet& net, double cl);
double loss_v(double eta, double L, double eps);

struct Gradient {
  NetGradient net;
  double eta = 0.0;
};

struct GradientResult {
  LossBreakdown loss;
  Gradient grad;
};

/// Exact (sub)gradient of risk + LP + Lv for one batch. Hinges use slope 1
/// at the kink. Throws BarrierViolation when P is not PD.
GradientResult gradients(const LyapunovNet& net, double eta, const PairBatch& batch,
                         const Hyperparams& hp, double L);

/// Adam or plain SGD on a flat parameter vector.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::size_t size, double beta1, double beta2, double epsilon);

  /// One update; lr holds a per-parameter learning rate.
  void step(std::vector<double>& params, const std::vector<double>& grad,
            const std::vector<double>& lr);

  OptimizerKind kind() const { return kind_; }

 private:
  OptimizerKind kind_;
  double beta1_, beta2_, epsilon_;
  double beta1_t_ = 1.0, beta2_t_ = 1.0;
  std::vector<double> m_, v_;
};

struct EpochTrace {
  int epoch = 0;
  LossBreakdown loss;  // summed over the epoch's batches
  double eta = 0.0;
};

struct TrainState {
  LyapunovNet net;
  double eta = 0.0;
  std::optional<Optimizer> optimizer;
  int epoch = 0;
  std::vector<EpochTrace> trace;
};

/// Full-set check of the termination conditions. The exhaustive scenario pass
/// runs only when the barrier and validity conditions already hold.
struct ConvergenceCheck {
  bool risk_zero = false;     // every scenario residual <= eta
  bool validity_zero = false; // eta + L eps <= 0
  bool barrier_ok = false;    // P PD and log det P >= 0
  std::optional<double> eta_star;  // present when the scenario pass ran to completion
  bool coarsened = false;
  bool passed() const { return risk_zero && validity_zero && barrier_ok; }
};

struct TrainingReport {
  bool converged = false;
  double final_eta = 0.0;
  LossBreakdown final_loss;  // last epoch, summed over batches
  int epochs_used = 0;
  double wall_time = 0.0;
  double L = 0.0;
  double eps = 0.0;
  int rejected_steps = 0;
  std::optional<ConvergenceCheck> last_check;
  std::string stop_reason;
};

/// Raised when the initial network does not satisfy P > 0.
class InitialFeasibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs the training procedure. L is the composite certificate constant.
/// Throws std::invalid_argument when a sample set's radius exceeds hp.eps and
/// InitialFeasibilityError when the initial P is not positive definite.
std::pair<TrainState, TrainingReport> train(const DiscreteSystem& sys, const SampleSet& states,
                                            const SampleSet& inputs, const Hyperparams& hp,
                                            double L);

/// The termination check used by train(), exposed for reuse.
ConvergenceCheck check_convergence(const LyapunovNet& net, double eta, const DiscreteSystem& sys,
                                   const SampleSet& states, const SampleSet& inputs,
                                   const Hyperparams& hp, double L);

}  // namespace deltaiss
