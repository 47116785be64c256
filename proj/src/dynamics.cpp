#include "deltaiss/dynamics.hpp"

#include "text_util.hpp"

#include <cmath>
#include <ostream>
#include <sstream>
#include <utility>

namespace deltaiss {

Box::Box(Vector lower, Vector upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
  if (lower_.size() == 0 || lower_.size() != upper_.size()) {
    throw std::invalid_argument("Box: lower and upper must have equal length >= 1");
  }
  for (Eigen::Index i = 0; i < lower_.size(); ++i) {
    if (!std::isfinite(lower_[i]) || !std::isfinite(upper_[i]) || lower_[i] > upper_[i]) {
      throw std::invalid_argument("Box: need finite lower[i] <= upper[i] in dimension " +
                                  std::to_string(i));
    }
  }
}

Box Box::interval(double lo, double hi) {
  return Box(Vector::Constant(1, lo), Vector::Constant(1, hi));
}

Box Box::uniform(int dim, double lo, double hi) {
  return Box(Vector::Constant(dim, lo), Vector::Constant(dim, hi));
}

bool Box::contains(const Vector& v, double tol) const {
  if (v.size() != lower_.size()) return false;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(v[i] >= lower_[i] - tol && v[i] <= upper_[i] + tol)) return false;
  }
  return true;
}

Vector Box::clamp(const Vector& v) const { return v.cwiseMax(lower_).cwiseMin(upper_); }

DiscreteSystem::DiscreteSystem(std::string name, Box state_box, Box input_box,
                               StepFunction step)
    : name_(std::move(name)),
      state_box_(std::move(state_box)),
      input_box_(std::move(input_box)),
      step_(std::move(step)) {
  if (!step_) throw std::invalid_argument("DiscreteSystem: empty step oracle");
}

Vector DiscreteSystem::step(const Vector& x, const Vector& u) const {
  if (x.size() != state_dim() || u.size() != input_dim()) {
    throw BoxViolation(name_ + ": step called with wrong dimensions");
  }
  if (!state_box_.contains(x, kBoxTolerance)) {
    throw BoxViolation(name_ + ": state outside the state box: " + text::join(x));
  }
  if (!input_box_.contains(u, kBoxTolerance)) {
    throw BoxViolation(name_ + ": input outside the input box: " + text::join(u));
  }
  Vector next = step_(x, u);
  if (next.size() != state_dim()) {
    throw std::runtime_error(name_ + ": oracle returned a state of wrong dimension");
  }
  return next;
}

DiscreteSystem make_scalar_decay(double tau, double a, std::optional<Box> state_box,
                                 std::optional<Box> input_box) {
  if (!(tau > 0)) throw std::invalid_argument("make_scalar_decay: tau must be > 0");
  Box X = state_box.value_or(Box::interval(0.0, 0.5));
  Box U = input_box.value_or(Box::interval(0.0, 0.5));
  if (X.dim() != 1 || U.dim() != 1) {
    throw std::invalid_argument("make_scalar_decay: boxes must be one-dimensional");
  }
  auto step = [tau, a](const Vector& x, const Vector& u) {
    double s = x[0];
    // Euler roundoff can leave the state a hair below zero.
    if (s < -1e-12) {
      throw DomainError("scalar_decay: square root of negative state " + text::fmt(s));
    }
    if (s < 0) s = 0;
    Vector next(1);
    next[0] = x[0] + tau * (a * std::sqrt(s) + u[0]);
    return next;
  };
  return DiscreteSystem("scalar_decay", std::move(X), std::move(U), step);
}

DiscreteSystem make_dc_motor(const DcMotorParams& p) {
  for (double c : {p.tau, p.Ra, p.La, p.J, p.B, p.kb}) {
    if (!(c > 0)) throw std::invalid_argument("make_dc_motor: constants must be > 0");
  }
  Box X = p.state_box.value_or(Box::uniform(2, 0.0, 0.2));
  Box U = p.input_box.value_or(Box::interval(0.17, 0.18));
  if (X.dim() != 2 || U.dim() != 1) {
    throw std::invalid_argument("make_dc_motor: need a 2-D state box and 1-D input box");
  }
  auto step = [p](const Vector& x, const Vector& u) {
    Vector next(2);
    next[0] = x[0] + p.tau * (-(p.Ra / p.La) * x[0] - (p.kb / p.La) * x[1] + u[0] / p.La);
    next[1] = x[1] + p.tau * ((p.kb / p.J) * x[0] - (p.B / p.J) * x[1]);
    return next;
  };
  return DiscreteSystem("dc_motor", std::move(X), std::move(U), step);
}

namespace {

Trajectory roll(const DiscreteSystem& sys, const Vector& x0, std::span<const Vector> inputs,
                bool throw_on_exit) {
  Trajectory traj;
  traj.states.reserve(inputs.size() + 1);
  traj.inputs.reserve(inputs.size());
  auto check = [&](std::size_t k, const Vector& x) {
    if (sys.state_box().contains(x, DiscreteSystem::kBoxTolerance)) return true;
    if (throw_on_exit) {
      throw ForwardInvarianceError(
          k, sys.name() + ": state left the state box at k = " + std::to_string(k));
    }
    return false;
  };
  if (x0.size() != sys.state_dim()) throw BoxViolation("simulate: x0 has wrong dimension");
  traj.states.push_back(x0);
  if (!check(0, x0)) return traj;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Vector next = sys.step(traj.states.back(), inputs[k]);
    traj.inputs.push_back(inputs[k]);
    traj.states.push_back(std::move(next));
    if (!check(k + 1, traj.states.back())) break;
  }
  return traj;
}

}  // namespace

Trajectory simulate(const DiscreteSystem& sys, const Vector& x0, std::span<const Vector> inputs) {
  return roll(sys, x0, inputs, true);
}

Trajectory simulate_until_exit(const DiscreteSystem& sys, const Vector& x0,
                               std::span<const Vector> inputs) {
  return roll(sys, x0, inputs, false);
}

std::vector<double> pairwise_gap(const Trajectory& t1, const Trajectory& t2) {
  if (t1.states.size() != t2.states.size()) {
    throw std::invalid_argument("pairwise_gap: trajectories differ in length");
  }
  std::vector<double> gap(t1.states.size());
  for (std::size_t k = 0; k < gap.size(); ++k) {
    if (t1.states[k].size() != t2.states[k].size()) {
      throw std::invalid_argument("pairwise_gap: state dimension mismatch");
    }
    gap[k] = (t1.states[k] - t2.states[k]).norm();
  }
  return gap;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, int input_dim) {
  if (traj.states.empty()) return;
  const auto n = traj.states.front().size();
  const Eigen::Index m = input_dim;
  out << "k";
  for (Eigen::Index i = 1; i <= n; ++i) out << ",x" << i;
  for (Eigen::Index i = 1; i <= m; ++i) out << ",u" << i;
  out << "\n";
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    out << k;
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << text::fmt(traj.states[k][i]);
    for (Eigen::Index i = 0; i < m; ++i) {
      out << ',';
      if (k < traj.inputs.size()) out << text::fmt(traj.inputs[k][i]);
    }
    out << "\n";
  }
}

}  // namespace deltaiss
