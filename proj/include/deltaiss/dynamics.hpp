#pragma once

// Black-box discrete-time systems, the two benchmark plants and trajectory
// simulation. Everything downstream talks to a system only through
// DiscreteSystem::step.

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deltaiss {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when a closed-form step is asked to leave its mathematical domain
/// (e.g. the square root of a clearly negative state).
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when step() receives a state or input outside its box.
class BoxViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by simulate() when a state leaves the state box.
class ForwardInvarianceError : public std::runtime_error {
 public:
  ForwardInvarianceError(std::size_t index, const std::string& what)
      : std::runtime_error(what), index_(index) {}
  /// First step k at which states[k] is outside the state box.
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// Axis-aligned box [lower, upper] in R^d, d >= 1.
class Box {
 public:
  Box(Vector lower, Vector upper);

  static Box interval(double lo, double hi);
  static Box uniform(int dim, double lo, double hi);

  int dim() const { return static_cast<int>(lower_.size()); }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }
  Vector width() const { return upper_ - lower_; }
  Vector center() const { return 0.5 * (lower_ + upper_); }

  bool contains(const Vector& v, double tol = 0.0) const;
  Vector clamp(const Vector& v) const;
  /// Euclidean diameter, the supremum of |a - b| over the box.
  double diameter() const { return width().norm(); }

  bool operator==(const Box& other) const {
    return lower_ == other.lower_ && upper_ == other.upper_;
  }

 private:
  Vector lower_;
  Vector upper_;
};

using StepFunction = std::function<Vector(const Vector& x, const Vector& u)>;

/// The tuple (X, U, f) of a discrete-time control system x(k+1) = f(x(k), u(k)).
class DiscreteSystem {
 public:
  /// Absolute slack used when checking box membership of step arguments.
  static constexpr double kBoxTolerance = 1e-12;

  DiscreteSystem(std::string name, Box state_box, Box input_box, StepFunction step);

  const std::string& name() const { return name_; }
  int state_dim() const { return state_box_.dim(); }
  int input_dim() const { return input_box_.dim(); }
  const Box& state_box() const { return state_box_; }
  const Box& input_box() const { return input_box_; }

  /// Checked oracle call. Throws BoxViolation on arguments outside the boxes.
  Vector step(const Vector& x, const Vector& u) const;

 private:
  std::string name_;
  Box state_box_;
  Box input_box_;
  StepFunction step_;
};

/// x(k+1) = x(k) + tau * (a * sqrt(x(k)) + u(k)). Defaults X = U = [0, 0.5].
DiscreteSystem make_scalar_decay(double tau = 0.01, double a = -1.0,
                                 std::optional<Box> state_box = std::nullopt,
                                 std::optional<Box> input_box = std::nullopt);

struct DcMotorParams {
  double tau = 0.001;
  double Ra = 1.0;   // armature resistance
  double La = 0.01;  // armature inductance
  double J = 0.01;   // rotor inertia
  double B = 1.0;    // friction coefficient
  double kb = 0.01;  // back-emf constant
  std::optional<Box> state_box;  // default [0, 0.2]^2
  std::optional<Box> input_box;  // default [0.17, 0.18] (V_in)
};

/// Euler-discretized permanent magnet DC motor; state (armature current,
/// shaft speed), input V_in.
DiscreteSystem make_dc_motor(const DcMotorParams& params = {});

struct Trajectory {
  std::vector<Vector> states;  // size inputs.size() + 1
  std::vector<Vector> inputs;
};

/// Rolls the system forward. Throws ForwardInvarianceError with the first
/// index whose state leaves the state box.
Trajectory simulate(const DiscreteSystem& sys, const Vector& x0,
                    std::span<const Vector> inputs);

/// Like simulate() but stops (without throwing) at the first state that
/// leaves the state box; that state is kept as the last entry.
Trajectory simulate_until_exit(const DiscreteSystem& sys, const Vector& x0,
                               std::span<const Vector> inputs);

/// Euclidean gap |x1(k) - x2(k)| per step.
std::vector<double> pairwise_gap(const Trajectory& t1, const Trajectory& t2);

/// CSV with header k,x1..xn,u1..um; the input columns are blank on the last row.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj, int input_dim);

}  // namespace deltaiss
