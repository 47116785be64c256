#include "deltaiss/sampling.hpp"

#include "text_util.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <string>

namespace deltaiss {

SampleSet build_epsilon_net(const Box& box, double target_radius, std::size_t max_points) {
  if (!(target_radius > 0) || !std::isfinite(target_radius)) {
    throw std::invalid_argument("build_epsilon_net: target_radius must be > 0");
  }
  const int d = box.dim();
  const double max_spacing = 2.0 * target_radius / std::sqrt(static_cast<double>(d));
  const Vector width = box.width();

  std::vector<std::size_t> counts(d);
  Vector spacing(d);
  double total = 1.0;
  for (int i = 0; i < d; ++i) {
    double c = std::ceil(width[i] / max_spacing);
    if (c < 1) c = 1;
    total *= c;
    if (total > static_cast<double>(max_points)) {
      throw BudgetExceeded("build_epsilon_net: radius " + text::fmt(target_radius) +
                           " needs more than " + std::to_string(max_points) + " points");
    }
    counts[i] = static_cast<std::size_t>(c);
    spacing[i] = width[i] / c;
  }

  SampleSet set{.points = {}, .radius = 0.5 * spacing.norm(), .box = box, .counts = counts};
  set.points.reserve(static_cast<std::size_t>(total));
  std::vector<std::size_t> idx(d, 0);
  while (true) {
    Vector p(d);
    for (int i = 0; i < d; ++i) {
      p[i] = box.lower()[i] + (static_cast<double>(idx[i]) + 0.5) * spacing[i];
      if (p[i] > box.upper()[i]) p[i] = box.upper()[i];
    }
    set.points.push_back(std::move(p));
    int axis = d - 1;
    while (axis >= 0 && ++idx[axis] == counts[axis]) idx[axis--] = 0;
    if (axis < 0) break;
  }
  return set;
}

double effective_epsilon(const SampleSet& state_set, const SampleSet& input_set) {
  return std::max(state_set.radius, input_set.radius);
}

void fill_next_states(PairBatch& batch, const DiscreteSystem& sys) {
  if (batch.input_pairs.size() != batch.state_pairs.size()) {
    throw std::invalid_argument("fill_next_states: state/input pair counts differ");
  }
  batch.next_pairs.clear();
  batch.next_pairs.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    batch.next_pairs.push_back({sys.step(batch.state_pairs[i].first, batch.input_pairs[i].first),
                                sys.step(batch.state_pairs[i].second, batch.input_pairs[i].second)});
  }
}

std::vector<PairBatch> make_pair_batches(const SampleSet& states, const SampleSet& inputs,
                                         const DiscreteSystem& sys, int n_b, int batch_size,
                                         std::uint64_t seed) {
  if (n_b < 1 || batch_size < 1) {
    throw std::invalid_argument("make_pair_batches: n_b and batch_size must be >= 1");
  }
  if (states.points.empty() || inputs.points.empty()) {
    throw std::invalid_argument("make_pair_batches: empty sample set");
  }
  std::vector<PairBatch> batches(static_cast<std::size_t>(n_b));
  for (int b = 0; b < n_b; ++b) {
    std::mt19937_64 rng(text::mix(seed ^ text::mix(static_cast<std::uint64_t>(b) + 1)));
    std::uniform_int_distribution<std::size_t> pick_x(0, states.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_u(0, inputs.size() - 1);
    PairBatch& batch = batches[b];
    batch.state_pairs.reserve(batch_size);
    batch.input_pairs.reserve(batch_size);
    for (int i = 0; i < batch_size; ++i) {
      const std::size_t q = pick_x(rng);
      const std::size_t r = pick_x(rng);
      const std::size_t p = pick_u(rng);
      const std::size_t s = pick_u(rng);
      batch.state_pairs.push_back({states.points[q], states.points[r]});
      batch.input_pairs.push_back({inputs.points[p], inputs.points[s]});
    }
    fill_next_states(batch, sys);
  }
  return batches;
}

PairBatch exhaustive_pairs(const SampleSet& states, const SampleSet& inputs,
                           const DiscreteSystem& sys, std::size_t max_pairs) {
  const double n = static_cast<double>(states.size());
  const double m = static_cast<double>(inputs.size());
  if (n * n * m * m > static_cast<double>(max_pairs)) {
    throw BudgetExceeded("exhaustive_pairs: " + text::fmt(n * n * m * m) +
                         " pairs exceed the cap of " + std::to_string(max_pairs));
  }
  PairBatch batch;
  for (const auto& xq : states.points)
    for (const auto& xr : states.points)
      for (const auto& uq : inputs.points)
        for (const auto& ur : inputs.points) {
          batch.state_pairs.push_back({xq, xr});
          batch.input_pairs.push_back({uq, ur});
        }
  fill_next_states(batch, sys);
  return batch;
}

void write_sample_csv(std::ostream& out, const SampleSet& set) {
  const int d = set.box.dim();
  for (int i = 1; i <= d; ++i) out << (i > 1 ? "," : "") << 'x' << i;
  out << "\n";
  for (const auto& p : set.points) out << text::join(p, ",") << "\n";
}

void write_sample_sidecar(std::ostream& out, const SampleSet& set) {
  nlohmann::json j;
  j["radius"] = set.radius;
  j["lower"] = std::vector<double>(set.box.lower().begin(), set.box.lower().end());
  j["upper"] = std::vector<double>(set.box.upper().begin(), set.box.upper().end());
  j["count"] = set.points.size();
  j["counts"] = set.counts;
  out << j.dump(2) << "\n";
}

SampleSet read_sample_set(std::istream& csv, std::istream& sidecar) {
  nlohmann::json j;
  try {
    sidecar >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("sample sidecar: ") + e.what());
  }
  auto lower = j.at("lower").get<std::vector<double>>();
  auto upper = j.at("upper").get<std::vector<double>>();
  Box box(Eigen::Map<Vector>(lower.data(), static_cast<Eigen::Index>(lower.size())),
          Eigen::Map<Vector>(upper.data(), static_cast<Eigen::Index>(upper.size())));
  SampleSet set{.points = {}, .radius = j.at("radius").get<double>(), .box = box, .counts = {}};
  if (j.contains("counts")) set.counts = j["counts"].get<std::vector<std::size_t>>();

  std::string line;
  if (!std::getline(csv, line)) throw std::runtime_error("sample csv: missing header");
  if (static_cast<int>(text::split(text::trim(line), ',').size()) != box.dim()) {
    throw std::runtime_error("sample csv: header does not match box dimension");
  }
  while (std::getline(csv, line)) {
    line = text::trim(line);
    if (line.empty()) continue;
    auto fields = text::split(line, ',');
    if (static_cast<int>(fields.size()) != box.dim()) {
      throw std::runtime_error("sample csv: row has " + std::to_string(fields.size()) +
                               " fields, expected " + std::to_string(box.dim()));
    }
    Vector p(box.dim());
    for (int i = 0; i < box.dim(); ++i) p[i] = text::parse_double(fields[i]);
    if (!box.contains(p)) throw std::runtime_error("sample csv: point outside the box");
    set.points.push_back(std::move(p));
  }
  if (j.contains("count") && j["count"].get<std::size_t>() != set.points.size()) {
    throw std::runtime_error("sample csv: point count disagrees with sidecar");
  }
  return set;
}

}  // namespace deltaiss
