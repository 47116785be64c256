#pragma once

// Grid epsilon-nets over state/input boxes and the paired batches that feed
// the scenario constraints.

#include "deltaiss/dynamics.hpp"

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace deltaiss {

/// A requested computation would exceed its configured size cap.
class BudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Finite sample set with a certified covering radius: every point of `box`
/// lies within `radius` of some element of `points`.
struct SampleSet {
  std::vector<Vector> points;
  double radius = 0.0;
  Box box;
  /// Grid counts per axis; empty when the set was imported without grid info.
  std::vector<std::size_t> counts;

  std::size_t size() const { return points.size(); }
};

inline constexpr std::size_t kDefaultNetPointCap = 10'000'000;

/// Cell-centred uniform grid whose half-diagonal is <= target_radius.
/// The stored radius is the exact half-diagonal of one grid cell.
SampleSet build_epsilon_net(const Box& box, double target_radius,
                            std::size_t max_points = kDefaultNetPointCap);

/// eps = max(eps_x, eps_u).
double effective_epsilon(const SampleSet& state_set, const SampleSet& input_set);

struct VectorPair {
  Vector first;
  Vector second;
};

struct PairBatch {
  std::vector<VectorPair> state_pairs;  // (x_q, x_r)
  std::vector<VectorPair> input_pairs;  // (u_q, u_r)
  std::vector<VectorPair> next_pairs;   // (f(x_q,u_q), f(x_r,u_r)); empty until filled

  std::size_t size() const { return state_pairs.size(); }
  bool has_next() const { return !next_pairs.empty() && next_pairs.size() == state_pairs.size(); }
};

/// Evaluates the oracle on every (state, input) pair of the batch.
void fill_next_states(PairBatch& batch, const DiscreteSystem& sys);

/// n_b batches of independent uniform draws from X x X x U x U with next
/// states filled. Batch b uses its own sub-seed derived from (seed, b).
std::vector<PairBatch> make_pair_batches(const SampleSet& states, const SampleSet& inputs,
                                         const DiscreteSystem& sys, int n_b, int batch_size,
                                         std::uint64_t seed);

/// Every (x_q, x_r, u_q, u_r) combination, materialized. Only for small sets;
/// throws BudgetExceeded above max_pairs.
PairBatch exhaustive_pairs(const SampleSet& states, const SampleSet& inputs,
                           const DiscreteSystem& sys, std::size_t max_pairs = 1'000'000);

/// CSV rows `x1,...,xn` with a header line.
void write_sample_csv(std::ostream& out, const SampleSet& set);
/// JSON sidecar {"radius":..., "lower":[...], "upper":[...], "count":N, "counts":[...]}.
void write_sample_sidecar(std::ostream& out, const SampleSet& set);
/// Reads a CSV + sidecar pair. Throws std::runtime_error on malformed input or
/// points outside the recorded box.
SampleSet read_sample_set(std::istream& csv, std::istream& sidecar);

}  // namespace deltaiss
