#include "deltaiss/sampling.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <sstream>

using namespace deltaiss;

namespace {

// Brute-force distance from v to the nearest sample.
double nearest(const SampleSet& set, const Vector& v) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : set.points) best = std::min(best, (p - v).norm());
  return best;
}

// Exact nearest point of a cell-centred grid, found per axis.
double nearest_on_grid(const SampleSet& set, const Vector& v) {
  const Box& b = set.box;
  double sq = 0.0;
  for (int i = 0; i < b.dim(); ++i) {
    const double c = static_cast<double>(set.counts[i]);
    const double h = b.width()[i] / c;
    double k = h > 0 ? std::floor((v[i] - b.lower()[i]) / h) : 0.0;
    k = std::clamp(k, 0.0, c - 1);
    const double center = b.lower()[i] + (k + 0.5) * h;
    sq += (v[i] - center) * (v[i] - center);
  }
  return std::sqrt(sq);
}

Vector uniform_in(const Box& b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector v(b.dim());
  for (int i = 0; i < b.dim(); ++i) v[i] = b.lower()[i] + unit(rng) * b.width()[i];
  return v;
}

}  // namespace

TEST_CASE("epsilon net on the scalar box") {
  const SampleSet s = build_epsilon_net(Box::interval(0.0, 0.5), 0.000177);
  CHECK(s.size() >= 1413);
  CHECK(s.radius <= 0.000177);
  const double spacing = 0.5 / static_cast<double>(s.size());
  CHECK(spacing <= 0.000354);
  CHECK(s.radius == doctest::Approx(spacing / 2).epsilon(1e-12));
  for (const auto& p : s.points) CHECK(s.box.contains(p));
}

TEST_CASE("a large radius gives the single centre point") {
  const SampleSet s = build_epsilon_net(Box::uniform(2, 0.0, 1.0), std::sqrt(2.0) / 2);
  REQUIRE(s.size() == 1);
  CHECK(s.points[0][0] == 0.5);
  CHECK(s.points[0][1] == 0.5);
}

TEST_CASE("epsilon net on the motor box covers it") {
  const SampleSet s = build_epsilon_net(Box::uniform(2, 0.0, 0.2), 0.004);
  REQUIRE(s.counts.size() == 2);
  CHECK(s.counts[0] >= 36);
  CHECK(s.counts[1] >= 36);
  CHECK(s.radius <= 0.004);
  std::mt19937_64 rng(7);
  int failures = 0;
  for (int i = 0; i < 2000; ++i) {
    const Vector v = uniform_in(s.box, rng);
    if (nearest(s, v) > s.radius) ++failures;
  }
  CHECK(failures == 0);
}

TEST_CASE("grid nearest-point shortcut agrees with brute force") {
  const SampleSet s = build_epsilon_net(Box(Vector::Constant(2, -1.0), Vector::Constant(2, 0.5)), 0.07);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const Vector v = uniform_in(s.box, rng);
    CHECK(nearest_on_grid(s, v) == doctest::Approx(nearest(s, v)).epsilon(1e-12));
  }
}

TEST_CASE("point cap is enforced") {
  CHECK_THROWS_AS(build_epsilon_net(Box::uniform(3, 0.0, 1.0), 1e-4, 1000), BudgetExceeded);
  CHECK_THROWS_AS(build_epsilon_net(Box::interval(0.0, 1.0), 0.0), std::invalid_argument);
}

TEST_CASE("effective epsilon is the larger radius") {
  auto with_radius = [](double r) {
    SampleSet s = build_epsilon_net(Box::interval(0.0, 1.0), 1.0);
    s.radius = r;
    return s;
  };
  CHECK(effective_epsilon(with_radius(0.000177), with_radius(0.000177)) == 0.000177);
  CHECK(effective_epsilon(with_radius(0.3), with_radius(0.0)) == 0.3);
  CHECK(effective_epsilon(with_radius(0.001), with_radius(0.004)) == 0.004);
}

TEST_CASE("pair batches are deterministic, closed and oracle-consistent") {
  const DiscreteSystem sys = make_dc_motor();
  const SampleSet X = build_epsilon_net(sys.state_box(), 0.02);
  const SampleSet U = build_epsilon_net(sys.input_box(), 0.002);
  const auto a = make_pair_batches(X, U, sys, 3, 1, 42);
  const auto b = make_pair_batches(X, U, sys, 3, 1, 42);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].state_pairs[0].first == b[i].state_pairs[0].first);
    CHECK(a[i].input_pairs[0].second == b[i].input_pairs[0].second);
  }

  const auto big = make_pair_batches(X, U, sys, 4, 64, 9);
  for (const auto& batch : big) {
    REQUIRE(batch.has_next());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      CHECK(sys.state_box().contains(batch.state_pairs[i].first));
      CHECK(sys.state_box().contains(batch.state_pairs[i].second));
      CHECK(sys.input_box().contains(batch.input_pairs[i].first));
      CHECK(batch.next_pairs[i].first ==
            sys.step(batch.state_pairs[i].first, batch.input_pairs[i].first));
      CHECK(batch.next_pairs[i].second ==
            sys.step(batch.state_pairs[i].second, batch.input_pairs[i].second));
    }
  }
  CHECK_THROWS(make_pair_batches(X, U, sys, 0, 4, 1));
}

TEST_CASE("pair draws are uniform and swap-symmetric") {
  const DiscreteSystem sys("id", Box::interval(0.0, 1.0), Box::interval(0.0, 1.0),
                           [](const Vector& x, const Vector&) -> Vector { return x; });
  const SampleSet X = build_epsilon_net(sys.state_box(), 0.05);  // 10 points
  REQUIRE(X.size() == 10);
  const SampleSet U = build_epsilon_net(sys.input_box(), 1.0);
  const auto batches = make_pair_batches(X, U, sys, 10, 10000, 5);

  auto index_of = [&](const Vector& v) {
    return static_cast<int>(std::lround((v[0] - 0.05) / 0.1));
  };
  std::vector<double> freq(10, 0.0);
  std::map<std::pair<int, int>, double> pairs;
  double n = 0;
  for (const auto& batch : batches) {
    for (const auto& p : batch.state_pairs) {
      const int q = index_of(p.first), r = index_of(p.second);
      freq[q] += 1;
      pairs[{q, r}] += 1;
      n += 1;
    }
  }
  const double expected = n / 10, sd = std::sqrt(n * 0.1 * 0.9);
  for (double f : freq) CHECK(std::abs(f - expected) <= 5 * sd);
  const double pair_sd = std::sqrt(2 * n * 0.01);
  for (int q = 0; q < 10; ++q) {
    for (int r = q + 1; r < 10; ++r) {
      CHECK(std::abs(pairs[{q, r}] - pairs[{r, q}]) <= 5 * pair_sd);
    }
  }
}

TEST_CASE("exhaustive pairs enumerate every combination") {
  const DiscreteSystem sys = make_scalar_decay();
  const SampleSet X = build_epsilon_net(sys.state_box(), 0.1);
  const SampleSet U = build_epsilon_net(sys.input_box(), 0.2);
  const PairBatch all = exhaustive_pairs(X, U, sys);
  CHECK(all.size() == X.size() * X.size() * U.size() * U.size());
  CHECK(all.has_next());
  CHECK_THROWS_AS(exhaustive_pairs(X, U, sys, 10), BudgetExceeded);
}

TEST_CASE("sample sets round-trip through CSV and sidecar") {
  const SampleSet s = build_epsilon_net(Box::uniform(2, 0.0, 0.2), 0.03);
  std::ostringstream csv, side;
  write_sample_csv(csv, s);
  write_sample_sidecar(side, s);
  std::istringstream csv_in(csv.str()), side_in(side.str());
  const SampleSet back = read_sample_set(csv_in, side_in);
  CHECK(back.radius == s.radius);
  CHECK(back.box == s.box);
  CHECK(back.counts == s.counts);
  REQUIRE(back.size() == s.size());
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(back.points[i] == s.points[i]);

  std::istringstream bad_csv("x1,x2\n0.5,0.1\n"), side_again(side.str());
  CHECK_THROWS_AS(read_sample_set(bad_csv, side_again), std::runtime_error);
}
