#include "deltaiss/verify.hpp"

#include "text_util.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <random>
#include <thread>
#include <tuple>

namespace deltaiss {

namespace {

// Splits the first layer so that theta^0 [a; b] = W_L a + W_R b. The halves
// are computed once per point; a pair then costs only the remaining layers.
class SplitEvaluator {
 public:
  explicit SplitEvaluator(const LyapunovNet& net) : net_(net) {
    const int n = net.state_dim();
    const Matrix& w0 = net.weights()[0];
    left_ = w0.leftCols(n);
    right_ = w0.rightCols(n);
  }

  Vector left(const Vector& x) const { return left_ * x; }
  Vector right(const Vector& x) const { return right_ * x; }

  struct Scratch {
    std::vector<Vector> buf;
  };

  Scratch scratch() const {
    Scratch s;
    for (std::size_t i = 1; i + 1 < net_.widths().size(); ++i) {
      s.buf.emplace_back(net_.widths()[i]);
    }
    return s;
  }

  double value(const Vector& l, const Vector& r, Scratch& s) const {
    const int layers = net_.hidden_layers();
    const auto& W = net_.weights();
    const auto& b = net_.biases();
    if (layers == 0) {
      return (l + r)[0] + b[0][0];
    }
    Vector& z0 = s.buf[0];
    z0.noalias() = l + r + b[0];
    activate(z0);
    for (int i = 1; i < layers; ++i) {
      s.buf[i].noalias() = W[i] * s.buf[i - 1];
      s.buf[i] += b[i];
      activate(s.buf[i]);
    }
    return W[layers].row(0).dot(s.buf[layers - 1]) + b[layers][0];
  }

 private:
  void activate(Vector& z) const {
    if (net_.activation() == Activation::Tanh) {
      for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = std::tanh(z[j]);
    } else {
      for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = z[j] > 0 ? z[j] : 0.0;
    }
  }

  const LyapunovNet& net_;
  Matrix left_, right_;
};

Vector draw(const Box& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector v(box.dim());
  for (int i = 0; i < box.dim(); ++i) v[i] = box.lower()[i] + unit(rng) * box.width()[i];
  return v;
}

double sanitize(double r) { return std::isnan(r) ? std::numeric_limits<double>::infinity() : r; }

auto key(const Witness& w) { return std::make_tuple(w.q, w.r, w.p, w.s); }

// True if a should replace b: larger residual, or equal residual at a
// lexicographically smaller index.
bool better(const Witness& a, const Witness& b) {
  if (!a.valid) return false;
  if (!b.valid) return true;
  if (a.residual != b.residual) return a.residual > b.residual;
  return key(a) < key(b);
}

double evaluation_count(std::size_t n, std::size_t m) {
  const double nn = static_cast<double>(n) * static_cast<double>(n);
  return nn + nn * static_cast<double>(m) * static_cast<double>(m);
}

SampleSet coarser(const SampleSet& set, double factor) {
  const double base = set.radius > 0 ? set.radius : 1.0;
  return build_epsilon_net(set.box, base * factor);
}

struct Tables {
  std::vector<Vector> left_s, right_s;  // per state
  std::vector<Vector> left_n, right_n;  // per (q, p), index q * M + p
};

Tables build_tables(const SplitEvaluator& ev, const SampleSet& states, const SampleSet& inputs,
                    const DiscreteSystem& sys) {
  const std::size_t N = states.size(), M = inputs.size();
  Tables t;
  t.left_s.reserve(N);
  t.right_s.reserve(N);
  t.left_n.reserve(N * M);
  t.right_n.reserve(N * M);
  for (const auto& x : states.points) {
    t.left_s.push_back(ev.left(x));
    t.right_s.push_back(ev.right(x));
  }
  for (const auto& x : states.points) {
    for (const auto& u : inputs.points) {
      const Vector xn = sys.step(x, u);
      t.left_n.push_back(ev.left(xn));
      t.right_n.push_back(ev.right(xn));
    }
  }
  return t;
}

}  // namespace

ScpResult scp_residual(const LyapunovNet& net, const SampleSet& states, const SampleSet& inputs,
                       const DiscreteSystem& sys, const Templates& templates,
                       const ScpOptions& options) {
  net.validate();
  if (states.size() == 0 || inputs.size() == 0) {
    throw std::invalid_argument("scp_residual: empty sample set");
  }
  if (net.state_dim() != sys.state_dim()) {
    throw std::invalid_argument("scp_residual: network and system state dimensions differ");
  }

  ScpResult result;
  const SampleSet* S = &states;
  const SampleSet* U = &inputs;
  std::optional<SampleSet> coarse_s, coarse_u;
  double factor = 1.0;
  while (evaluation_count(S->size(), U->size()) > options.budget) {
    if (!options.allow_coarsening) {
      throw BudgetExceeded("scp_residual: " + text::fmt(evaluation_count(S->size(), U->size())) +
                           " evaluations exceed the budget of " + text::fmt(options.budget));
    }
    if (S->size() == 1 && U->size() == 1) {
      throw BudgetExceeded("scp_residual: budget below a single evaluation");
    }
    factor *= 1.25;
    coarse_s = coarser(states, factor);
    coarse_u = coarser(inputs, factor);
    S = &*coarse_s;
    U = &*coarse_u;
    result.coarsened = true;
  }

  const std::size_t N = S->size(), M = U->size();
  result.state_radius = S->radius;
  result.input_radius = U->radius;
  result.n_states = N;
  result.n_inputs = M;

  const SplitEvaluator ev(net);
  const Tables tab = build_tables(ev, *S, *U, sys);

  // Input gaps and sigma values depend only on (p, s).
  std::vector<double> sigma_ps(M * M);
  for (std::size_t p = 0; p < M; ++p) {
    for (std::size_t s = 0; s < M; ++s) {
      sigma_ps[p * M + s] = templates.sigma((U->points[p] - U->points[s]).norm());
    }
  }

  const int T = std::max(1, options.threads);
  std::atomic<bool> stop{false};
  const double limit =
      options.stop_above ? *options.stop_above : std::numeric_limits<double>::infinity();
  std::vector<std::array<Witness, kFamilies>> local(T);

  auto work = [&](int t) {
    auto scratch = ev.scratch();
    auto& best = local[t];
    auto offer = [&](int fam, double res, std::size_t q, std::size_t r, std::size_t p,
                     std::size_t s) {
      res = sanitize(res);
      if (!best[fam].valid || res > best[fam].residual) {
        best[fam] = Witness{fam, q, r, p, s, res, true};
      }
      if (res > limit) stop.store(true, std::memory_order_relaxed);
    };
    for (std::size_t q = static_cast<std::size_t>(t); q < N; q += T) {
      if (stop.load(std::memory_order_relaxed)) return;
      for (std::size_t r = 0; r < N; ++r) {
        const double V = ev.value(tab.left_s[q], tab.right_s[r], scratch);
        const double g = (S->points[q] - S->points[r]).norm();
        offer(0, -V + templates.alpha1(g), q, r, 0, 0);
        offer(1, V - templates.alpha2(g), q, r, 0, 0);
        if (stop.load(std::memory_order_relaxed)) return;
        const double a3 = templates.alpha3(g);
        for (std::size_t p = 0; p < M; ++p) {
          const Vector& ln = tab.left_n[q * M + p];
          for (std::size_t s = 0; s < M; ++s) {
            const double Vn = ev.value(ln, tab.right_n[r * M + s], scratch);
            offer(2, Vn - V + a3 - sigma_ps[p * M + s], q, r, p, s);
          }
        }
      }
    }
  };

  if (T == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < T; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }

  for (const auto& l : local) {
    for (int f = 0; f < kFamilies; ++f) {
      if (better(l[f], result.worst[f])) result.worst[f] = l[f];
    }
  }
  for (const auto& w : result.worst) {
    if (w.valid) result.eta_star = std::max(result.eta_star, w.residual);
  }
  result.complete = !stop.load();
  result.evaluations = evaluation_count(N, M);
  return result;
}

double witness_residual(const LyapunovNet& net, const SampleSet& states, const SampleSet& inputs,
                        const DiscreteSystem& sys, const Templates& templates, const Witness& w) {
  if (w.q >= states.size() || w.r >= states.size() ||
      (w.family == 2 && (w.p >= inputs.size() || w.s >= inputs.size()))) {
    throw std::out_of_range("witness_residual: index outside the sample sets");
  }
  const SplitEvaluator ev(net);
  auto scratch = ev.scratch();
  const Vector& xq = states.points[w.q];
  const Vector& xr = states.points[w.r];
  const double V = ev.value(ev.left(xq), ev.right(xr), scratch);
  const double g = (xq - xr).norm();
  switch (w.family) {
    case 0:
      return sanitize(-V + templates.alpha1(g));
    case 1:
      return sanitize(V - templates.alpha2(g));
    case 2: {
      const Vector& up = inputs.points[w.p];
      const Vector& us = inputs.points[w.s];
      const double Vn =
          ev.value(ev.left(sys.step(xq, up)), ev.right(sys.step(xr, us)), scratch);
      return sanitize(Vn - V + templates.alpha3(g) - templates.sigma((up - us).norm()));
    }
    default:
      throw std::invalid_argument("witness_residual: unknown family");
  }
}

std::string to_string(Verdict v) {
  return v == Verdict::Certified ? "certified" : "not-certified";
}

ValidityResult validity_check(double eta_star, double L, double eps, bool psd_ok) {
  if (!(L >= 0) || !(eps >= 0)) {
    throw std::invalid_argument("validity_check: L and eps must be >= 0");
  }
  ValidityResult v;
  v.margin = eta_star + L * eps;
  if (std::isnan(v.margin)) v.margin = std::numeric_limits<double>::infinity();
  v.verdict = (v.margin <= 0 && psd_ok) ? Verdict::Certified : Verdict::NotCertified;
  return v;
}

CertificationReport certify(const LyapunovNet& net, const SampleSet& states,
                            const SampleSet& inputs, const DiscreteSystem& sys,
                            const Templates& templates, double L, double eps,
                            const ScpOptions& options) {
  ScpOptions opts = options;
  opts.stop_above.reset();
  const ScpResult scp = scp_residual(net, states, inputs, sys, templates, opts);
  const CertificateMatrix cm = assemble_P(net);

  CertificationReport rep;
  rep.eta_star = scp.eta_star;
  rep.L = L;
  rep.eps = std::max({eps, scp.state_radius, scp.input_radius});
  rep.psd_ok = cm.numerically_psd();
  rep.min_eig = cm.min_eig;
  rep.worst = scp.worst;
  rep.coarsened = scp.coarsened;
  rep.n_states = scp.n_states;
  rep.n_inputs = scp.n_inputs;
  rep.evaluations = scp.evaluations;
  const ValidityResult v = validity_check(rep.eta_star, L, rep.eps, rep.psd_ok);
  rep.margin = v.margin;
  rep.verdict = v.verdict;
  return rep;
}

namespace {

nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

std::string to_json(const CertificationReport& r, int indent) {
  static const char* names[kFamilies] = {"lower_bound", "upper_bound", "decrease"};
  nlohmann::json witnesses = nlohmann::json::object();
  for (int f = 0; f < kFamilies; ++f) {
    const Witness& w = r.worst[f];
    nlohmann::json j{{"residual", finite_or_null(w.residual)}, {"q", w.q}, {"r", w.r}};
    if (f == 2) {
      j["p"] = w.p;
      j["s"] = w.s;
    }
    witnesses[names[f]] = j;
  }
  nlohmann::json j{
      {"verdict", to_string(r.verdict)},
      {"eta_star", finite_or_null(r.eta_star)},
      {"L", r.L},
      {"eps", r.eps},
      {"margin", finite_or_null(r.margin)},
      {"psd_ok", r.psd_ok},
      {"min_eig", r.min_eig},
      {"coarsened", r.coarsened},
      {"n_states", r.n_states},
      {"n_inputs", r.n_inputs},
      {"evaluations", r.evaluations},
      {"worst", witnesses},
  };
  return j.dump(indent);
}

GridOracleResult grid_oracle(const LyapunovNet& net, const DiscreteSystem& sys,
                             const SampleSet& states, const SampleSet& inputs,
                             const Templates& templates, int refine, double budget) {
  if (refine < 1) throw std::invalid_argument("grid_oracle: refine must be >= 1");
  auto finer = [&](const SampleSet& set) {
    return build_epsilon_net(set.box, set.radius > 0 ? set.radius / refine : 1.0);
  };
  const SampleSet S = finer(states);
  const SampleSet U = finer(inputs);
  const std::size_t N = S.size(), M = U.size();
  const double count = evaluation_count(N, M);
  if (count > budget) {
    throw BudgetExceeded("grid_oracle: " + text::fmt(count) + " evaluations exceed the budget of " +
                         text::fmt(budget));
  }

  std::vector<Vector> next(N * M);
  for (std::size_t q = 0; q < N; ++q) {
    for (std::size_t p = 0; p < M; ++p) next[q * M + p] = sys.step(S.points[q], U.points[p]);
  }

  GridOracleResult out;
  out.n_states = N;
  out.n_inputs = M;
  out.evaluations = count;
  out.worst.fill(-std::numeric_limits<double>::infinity());
  auto offer = [&](int f, double res, std::size_t q, std::size_t r, std::size_t p,
                   std::size_t s) {
    res = sanitize(res);
    if (res > out.worst[f]) {
      out.worst[f] = res;
      out.witness[f] = Witness{f, q, r, p, s, res, true};
    }
  };
  for (std::size_t q = 0; q < N; ++q) {
    for (std::size_t r = 0; r < N; ++r) {
      const Vector& x = S.points[q];
      const Vector& xh = S.points[r];
      const double V = net.forward(x, xh);
      const double g = (x - xh).norm();
      offer(0, templates.alpha1(g) - V, q, r, 0, 0);
      offer(1, V - templates.alpha2(g), q, r, 0, 0);
      for (std::size_t p = 0; p < M; ++p) {
        for (std::size_t s = 0; s < M; ++s) {
          const double Vn = net.forward(next[q * M + p], next[r * M + s]);
          const double du = (U.points[p] - U.points[s]).norm();
          offer(2, Vn - V + templates.alpha3(g) - templates.sigma(du), q, r, p, s);
        }
      }
    }
  }
  return out;
}

FalsificationReport falsify_delta_iss(const DiscreteSystem& sys, int n_trials, int horizon,
                                      std::uint64_t seed, double tolerance) {
  if (n_trials < 1 || horizon < 1) {
    throw std::invalid_argument("falsify_delta_iss: n_trials and horizon must be >= 1");
  }
  std::mt19937_64 rng(text::mix(seed));
  const Box& X = sys.state_box();
  const Box& U = sys.input_box();

  FalsificationReport rep;
  rep.trials = n_trials;
  rep.horizon = horizon;
  auto run = [&](const Vector& x0, const Vector& u) {
    const std::vector<Vector> inputs(static_cast<std::size_t>(horizon), u);
    Trajectory t = simulate_until_exit(sys, x0, inputs);
    if (t.states.size() < inputs.size() + 1) ++rep.exits;
    return t;
  };
  // Gap series over the common prefix of two (possibly truncated) runs.
  auto gaps = [](const Trajectory& a, const Trajectory& b) {
    const std::size_t n = std::min(a.states.size(), b.states.size());
    std::vector<double> g(n);
    for (std::size_t k = 0; k < n; ++k) g[k] = (a.states[k] - b.states[k]).norm();
    return g;
  };

  // Identical inputs: the gap must not grow.
  for (int i = 0; i < n_trials; ++i) {
    const Vector x0 = draw(X, rng), x1 = draw(X, rng), u = draw(U, rng);
    const auto g = gaps(run(x0, u), run(x1, u));
    for (std::size_t k = 1; k < g.size(); ++k) {
      rep.max_gap_growth = std::max(rep.max_gap_growth, g[k] - g[k - 1]);
    }
    if (g.front() > 0) rep.contraction_ratio = std::max(rep.contraction_ratio, g.back() / g.front());
  }

  // Equal initial states, different inputs: calibrate the input gain.
  double gain = 0.0;
  for (int i = 0; i < n_trials; ++i) {
    const Vector x0 = draw(X, rng), u0 = draw(U, rng), u1 = draw(U, rng);
    const double du = (u0 - u1).norm();
    if (du == 0) continue;
    for (double gk : gaps(run(x0, u0), run(x0, u1))) gain = std::max(gain, gk / du);
  }
  rep.input_gain = 1.5 * gain;

  // Mixed trials against the calibrated bound.
  rep.worst_excess = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_trials; ++i) {
    const Vector x0 = draw(X, rng), x1 = draw(X, rng);
    const Vector u0 = draw(U, rng), u1 = draw(U, rng);
    const auto g = gaps(run(x0, u0), run(x1, u1));
    const double bound = rep.contraction_ratio * g.front() + rep.input_gain * (u0 - u1).norm();
    rep.worst_excess = std::max(rep.worst_excess, g.back() - bound);
  }

  rep.violation = rep.max_gap_growth > tolerance || rep.worst_excess > tolerance;
  return rep;
}

}  // namespace deltaiss
