#include "deltaiss/dynamics.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace deltaiss;

namespace {

Vector v1(double a) { return Vector::Constant(1, a); }
Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

std::vector<Vector> constant_inputs(std::size_t n, double u) { return std::vector<Vector>(n, v1(u)); }

}  // namespace

TEST_CASE("Box rejects inverted and mismatched bounds") {
  CHECK_THROWS_AS(Box(v1(1.0), v1(0.0)), std::invalid_argument);
  CHECK_THROWS_AS(Box(v1(0.0), v2(1.0, 1.0)), std::invalid_argument);
  CHECK_THROWS_AS(Box(Vector(0), Vector(0)), std::invalid_argument);
  CHECK_NOTHROW(Box(v1(0.3), v1(0.3)));
  const Box b = Box::uniform(2, 0.0, 0.2);
  CHECK(b.dim() == 2);
  CHECK(b.contains(v2(0.1, 0.2)));
  CHECK_FALSE(b.contains(v2(0.1, 0.21)));
  CHECK(b.diameter() == doctest::Approx(0.2 * std::sqrt(2.0)));
}

TEST_CASE("scalar decay steps") {
  const DiscreteSystem sys = make_scalar_decay();
  CHECK(sys.step(v1(0.25), v1(0.0))[0] == doctest::Approx(0.245).epsilon(1e-15));
  CHECK(sys.step(v1(0.0), v1(0.0))[0] == 0.0);
  CHECK(sys.step(v1(0.25), v1(0.5))[0] == 0.25);  // drift and input cancel
  CHECK(sys.step(v1(0.25), v1(0.45))[0] == doctest::Approx(0.2495).epsilon(1e-14));
}

TEST_CASE("scalar decay rejects states outside the box and negative square roots") {
  const DiscreteSystem sys = make_scalar_decay();
  CHECK_THROWS_AS(sys.step(v1(-0.1), v1(0.0)), BoxViolation);
  CHECK_THROWS_AS(sys.step(v1(0.1), v1(0.6)), BoxViolation);
  // A wider box lets the negative state reach the square root guard.
  const DiscreteSystem wide = make_scalar_decay(0.01, -1.0, Box::interval(-1.0, 1.0));
  CHECK_THROWS_AS(wide.step(v1(-0.1), v1(0.0)), DomainError);
  CHECK(std::isfinite(wide.step(v1(-1e-13), v1(0.0))[0]));
}

TEST_CASE("dc motor steps") {
  const DiscreteSystem sys = make_dc_motor();
  const Vector a = sys.step(v2(0.0, 0.0), v1(0.17));
  CHECK(a[0] == doctest::Approx(0.017).epsilon(1e-14));
  CHECK(a[1] == 0.0);
  const Vector b = sys.step(v2(0.1, 0.1), v1(0.17));
  CHECK(b[0] == doctest::Approx(0.1069).epsilon(1e-13));
  CHECK(b[1] == doctest::Approx(0.0901).epsilon(1e-13));
  CHECK_THROWS_AS(sys.step(v2(0.0, 0.0), v1(0.0)), BoxViolation);
}

TEST_CASE("equilibrium at the origin under zero input") {
  CHECK(make_scalar_decay().step(v1(0.0), v1(0.0))[0] == 0.0);
  DcMotorParams p;
  p.input_box = Box::interval(0.0, 0.18);
  const Vector x = make_dc_motor(p).step(v2(0.0, 0.0), v1(0.0));
  CHECK(x[0] == 0.0);
  CHECK(x[1] == 0.0);
}

TEST_CASE("scalar decay leaves the box near the origin under small inputs") {
  // x - tau sqrt(x) has its minimum -tau^2/4 at sqrt(x) = tau/2, so inputs
  // below tau/4 can push states in (0, tau^2) negative.
  const DiscreteSystem s = make_scalar_decay();
  CHECK(s.step(v1(2.5e-5), v1(0.0))[0] == doctest::Approx(-2.5e-5));
  CHECK_FALSE(s.state_box().contains(s.step(v1(2.5e-5), v1(0.002)), DiscreteSystem::kBoxTolerance));
  for (int i = 0; i <= 1000; ++i) {
    const double x = 1e-4 * i / 1000.0;
    CHECK(s.step(v1(x), v1(0.0025))[0] >= -1e-18);
  }
}

TEST_CASE("benchmarks are forward invariant on a 50-per-axis grid") {
  auto axis = [](double lo, double hi, int i) { return lo + (hi - lo) * i / 49.0; };
  const DiscreteSystem s = make_scalar_decay();
  for (int i = 0; i < 50; ++i) {
    for (int j = 0; j < 50; ++j) {
      const Vector x = s.step(v1(axis(0, 0.5, i)), v1(axis(0, 0.5, j)));
      CHECK(s.state_box().contains(x, DiscreteSystem::kBoxTolerance));
    }
  }
  const DiscreteSystem m = make_dc_motor();
  int bad = 0;
  for (int i = 0; i < 50; ++i) {
    for (int j = 0; j < 50; ++j) {
      for (int k = 0; k < 50; ++k) {
        const Vector x = m.step(v2(axis(0, 0.2, i), axis(0, 0.2, j)), v1(axis(0.17, 0.18, k)));
        if (!m.state_box().contains(x, DiscreteSystem::kBoxTolerance)) ++bad;
      }
    }
  }
  CHECK(bad == 0);
}

TEST_CASE("simulate produces consistent trajectories") {
  const DiscreteSystem sys = make_scalar_decay();
  const Trajectory zero = simulate(sys, v1(0.0), constant_inputs(3, 0.0));
  REQUIRE(zero.states.size() == 4);
  for (const auto& x : zero.states) CHECK(x[0] == 0.0);

  const auto inputs = constant_inputs(50, 0.3);
  const Trajectory t = simulate(sys, v1(0.4), inputs);
  REQUIRE(t.states.size() == inputs.size() + 1);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    CHECK(t.states[k + 1] == sys.step(t.states[k], t.inputs[k]));
  }
  const Trajectory again = simulate(sys, v1(0.4), inputs);
  CHECK(again.states == t.states);
}

TEST_CASE("simulate converges to the fixed point sqrt(x*) = u") {
  // 200 steps only reach 0.2265 from 0.5; the 1e-6 band needs ~1100 steps.
  const DiscreteSystem sys = make_scalar_decay();
  const Trajectory t = simulate(sys, v1(0.5), constant_inputs(2000, 0.43));
  CHECK(std::abs(t.states.back()[0] - 0.43 * 0.43) < 1e-6);
  const Trajectory short_run = simulate(sys, v1(0.5), constant_inputs(200, 0.43));
  CHECK(short_run.states.back()[0] == doctest::Approx(0.22646).epsilon(1e-4));
}

TEST_CASE("simulate reports the first state that leaves the box") {
  const DiscreteSystem grow("grow", Box::interval(0.0, 1.0), Box::interval(0.0, 1.0),
                            [](const Vector& x, const Vector&) -> Vector { return 2.0 * x; });
  try {
    simulate(grow, v1(0.1), constant_inputs(10, 0.0));
    FAIL("expected ForwardInvarianceError");
  } catch (const ForwardInvarianceError& e) {
    CHECK(e.index() == 4);  // 0.1, 0.2, 0.4, 0.8, 1.6
  }
  const Trajectory cut = simulate_until_exit(grow, v1(0.1), constant_inputs(10, 0.0));
  CHECK(cut.states.size() == 5);
  CHECK(cut.states.back()[0] == doctest::Approx(1.6));
  CHECK_THROWS_AS(simulate(grow, v1(2.0), constant_inputs(1, 0.0)), ForwardInvarianceError);
}

TEST_CASE("pairwise gap") {
  const DiscreteSystem sys = make_scalar_decay();
  const auto u = constant_inputs(200, 0.43);
  const Trajectory a = simulate(sys, v1(0.5), u);
  const Trajectory b = simulate(sys, v1(0.1), u);
  for (double g : pairwise_gap(a, a)) CHECK(g == 0.0);

  const auto gap = pairwise_gap(a, b);
  CHECK(gap.front() == doctest::Approx(0.4));
  for (std::size_t k = 1; k < gap.size(); ++k) CHECK(gap[k] <= gap[k - 1]);
  CHECK(gap.back() < gap.front());

  const Trajectory shorter = simulate(sys, v1(0.1), constant_inputs(10, 0.43));
  CHECK_THROWS_AS(pairwise_gap(a, shorter), std::invalid_argument);
}

TEST_CASE("gap under different inputs settles at a nonzero offset") {
  const DiscreteSystem scalar = make_scalar_decay();
  const auto g = pairwise_gap(simulate(scalar, v1(0.5), constant_inputs(3000, 0.43)),
                              simulate(scalar, v1(0.1), constant_inputs(3000, 0.45)));
  CHECK(g.back() < g.front());
  CHECK(g.back() == doctest::Approx(0.45 * 0.45 - 0.43 * 0.43).epsilon(1e-3));

  const DiscreteSystem motor = make_dc_motor();
  const auto h = pairwise_gap(
      simulate(motor, v2(0.0, 0.0), std::vector<Vector>(3000, v1(0.17))),
      simulate(motor, v2(0.0, 0.0), std::vector<Vector>(3000, v1(0.18))));
  CHECK(h.front() == 0.0);
  CHECK(h.back() > 1e-4);
  CHECK(std::abs(h.back() - h[h.size() - 2]) < 1e-12);
}

TEST_CASE("trajectory CSV layout") {
  const DiscreteSystem sys = make_dc_motor();
  const Trajectory t = simulate(sys, v2(0.0, 0.0), std::vector<Vector>(2, v1(0.17)));
  std::ostringstream out;
  write_trajectory_csv(out, t, sys.input_dim());
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "k,x1,x2,u1");
  std::getline(in, line);
  CHECK(line == "0,0,0,0.17");
  std::getline(in, line);
  std::getline(in, line);
  CHECK(line.rfind("2,", 0) == 0);
  CHECK(line.back() == ',');

  std::ostringstream single;
  write_trajectory_csv(single, simulate(sys, v2(0.1, 0.1), {}), 1);
  CHECK(single.str() == "k,x1,x2,u1\n0,0.1,0.1,\n");
}
