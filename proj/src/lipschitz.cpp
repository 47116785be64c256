#include "deltaiss/lipschitz.hpp"

#include "text_util.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace deltaiss {

KTemplate::KTemplate(double k_, double gamma_) : k(k_), gamma(gamma_) {
  if (!(k > 0)) throw std::invalid_argument("KTemplate: k must be > 0");
  if (!(gamma >= 1)) throw std::invalid_argument("KTemplate: gamma must be >= 1");
}

double KTemplate::operator()(double s) const {
  if (gamma == 1.0) return k * s;
  return k * std::pow(s, gamma);
}

double classk_lipschitz(const KTemplate& t, double domain_diameter) {
  if (!(t.gamma >= 1)) throw std::invalid_argument("classk_lipschitz: gamma < 1 is not Lipschitz at 0");
  if (!(t.k > 0)) throw std::invalid_argument("classk_lipschitz: k must be > 0");
  if (!(domain_diameter > 0)) throw std::invalid_argument("classk_lipschitz: diameter must be > 0");
  if (t.gamma == 1.0) return t.k;
  return t.k * t.gamma * std::pow(domain_diameter, t.gamma - 1.0);
}

double composite_L(double LL, double Lx, double Lu, double L1, double L2, double L3,
                   double Lsu) {
  for (double v : {LL, Lx, Lu, L1, L2, L3, Lsu}) {
    if (!(v >= 0)) throw std::invalid_argument("composite_L: arguments must be >= 0");
  }
  const double s = std::sqrt(2.0) * LL;
  return std::max({s + 2.0 * L1, s + 2.0 * L2, s * (Lx + Lu + 1.0) + 2.0 * (L3 + Lsu)});
}

namespace {

// Two-parameter Weibull MLE on the positive sample z (given as w = z / zmax
// with log_zmax = ln zmax). Returns the maximized log-likelihood and the shape.
struct WeibullProfile {
  double loglik;
  double shape;
  double log_scale;
};

WeibullProfile weibull_mle(std::span<const double> w, double log_zmax) {
  const double n = static_cast<double>(w.size());
  double sum_log = 0.0;
  for (double v : w) sum_log += std::log(v);
  const double mean_log = sum_log / n;

  // h(k) = sum w^k ln w / sum w^k - 1/k - mean(ln w), increasing in k.
  auto h = [&](double k) {
    double a = 0.0, b = 0.0;
    for (double v : w) {
      const double p = std::pow(v, k);
      a += p * std::log(v);
      b += p;
    }
    return a / b - 1.0 / k - mean_log;
  };
  double lo = std::log(1e-3), hi = std::log(1e4);
  double k;
  if (h(std::exp(hi)) < 0) {
    k = std::exp(hi);
  } else if (h(std::exp(lo)) > 0) {
    k = std::exp(lo);
  } else {
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
      const double mid = 0.5 * (lo + hi);
      (h(std::exp(mid)) < 0 ? lo : hi) = mid;
    }
    k = std::exp(0.5 * (lo + hi));
  }
  double mean_pow = 0.0;
  for (double v : w) mean_pow += std::pow(v, k);
  mean_pow /= n;
  const double ll = n * std::log(k) - n * std::log(mean_pow) + (k - 1.0) * sum_log -
                    n * log_zmax - n;
  return {ll, k, std::log(mean_pow) / k + log_zmax};
}

struct ProfilePoint {
  double loglik;
  double shape;
  double scale;
};

}  // namespace

ReverseWeibullFit fit_reverse_weibull(std::span<const double> maxima) {
  if (maxima.size() < 3) throw std::invalid_argument("fit_reverse_weibull: need >= 3 values");
  const auto [mn_it, mx_it] = std::minmax_element(maxima.begin(), maxima.end());
  const double top = *mx_it;
  const double spread = top - *mn_it;
  if (!(spread > 0)) throw std::invalid_argument("fit_reverse_weibull: zero spread");

  std::vector<double> w(maxima.size());
  auto profile = [&](double t) {
    const double mu = top + std::exp(t) * spread;
    double zmax = 0.0;
    for (std::size_t i = 0; i < maxima.size(); ++i) {
      w[i] = mu - maxima[i];
      zmax = std::max(zmax, w[i]);
    }
    for (double& v : w) v /= zmax;
    auto p = weibull_mle(w, std::log(zmax));
    return ProfilePoint{p.loglik, p.shape, std::exp(p.log_scale)};
  };

  // Offsets of the location above the sample maximum, in units of the spread.
  const double t_min = std::log(1e-8), t_max = std::log(50.0);
  constexpr int kGrid = 241;
  std::vector<double> ts(kGrid), lls(kGrid);
  int best = 0;
  for (int i = 0; i < kGrid; ++i) {
    ts[i] = t_min + (t_max - t_min) * i / (kGrid - 1);
    lls[i] = profile(ts[i]).loglik;
    if (lls[i] > lls[best]) best = i;
  }

  ReverseWeibullFit fit;
  double t_hat = ts[best];
  if (best == 0) {
    fit.boundary = true;
  } else {
    // Golden-section refinement on the bracketing cell pair.
    double a = ts[best - 1], b = ts[std::min(best + 1, kGrid - 1)];
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = profile(c).loglik, fd = profile(d).loglik;
    for (int it = 0; it < 100 && b - a > 1e-10; ++it) {
      if (fc > fd) {
        b = d, d = c, fd = fc;
        c = b - g * (b - a), fc = profile(c).loglik;
      } else {
        a = c, c = d, fc = fd;
        d = a + g * (b - a), fd = profile(d).loglik;
      }
    }
    t_hat = 0.5 * (a + b);
  }
  const ProfilePoint p_hat = profile(t_hat);
  fit.location = fit.boundary ? top : top + std::exp(t_hat) * spread;
  fit.shape = p_hat.shape;
  fit.scale = p_hat.scale;
  fit.log_likelihood = p_hat.loglik;

  // 95% profile-likelihood bound: drop of chi2_1(0.95)/2 in log-likelihood.
  const double target = p_hat.loglik - 0.5 * 3.841458820694124;
  fit.ci_upper = top + std::exp(t_max) * spread;
  fit.ci_bounded = false;
  double lo = t_hat;
  for (int i = 0; i < kGrid; ++i) {
    if (ts[i] <= t_hat) continue;
    if (lls[i] < target) {
      double hi = ts[i];
      for (int it = 0; it < 100 && hi - lo > 1e-12; ++it) {
        const double mid = 0.5 * (lo + hi);
        (profile(mid).loglik < target ? hi : lo) = mid;
      }
      fit.ci_upper = top + std::exp(hi) * spread;
      fit.ci_bounded = true;
      break;
    }
    lo = ts[i];
  }
  fit.ci_upper = std::max(fit.ci_upper, fit.location);
  return fit;
}

LipschitzEstimate estimate_system_lipschitz(const DiscreteSystem& sys, Axis axis, int n_batches,
                                            int batch_size, double delta, std::uint64_t seed) {
  if (n_batches < 30) throw std::invalid_argument("estimate_system_lipschitz: n_batches must be >= 30");
  if (batch_size < 1) throw std::invalid_argument("estimate_system_lipschitz: batch_size must be >= 1");
  if (!(delta > 0)) throw std::invalid_argument("estimate_system_lipschitz: delta must be > 0");

  LipschitzEstimate est;
  est.n_batches = n_batches;
  const Box& X = sys.state_box();
  const Box& U = sys.input_box();
  const Box& perturbed = axis == Axis::State ? X : U;
  if (!(perturbed.diameter() > 0)) {
    // Nothing to perturb: the map is constant along this axis on its domain.
    est.degenerate = true;
    est.batch_maxima.assign(n_batches, 0.0);
    return est;
  }

  auto draw_in = [](const Box& box, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vector v(box.dim());
    for (int i = 0; i < box.dim(); ++i) {
      v[i] = box.lower()[i] + unit(rng) * (box.upper()[i] - box.lower()[i]);
    }
    return v;
  };

  est.batch_maxima.reserve(n_batches);
  for (int b = 0; b < n_batches; ++b) {
    std::mt19937_64 rng(text::mix(seed ^ text::mix(0x11b5ULL + static_cast<std::uint64_t>(b))));
    std::normal_distribution<double> normal(0.0, 1.0);
    double batch_max = 0.0;
    for (int i = 0; i < batch_size; ++i) {
      const Vector x = draw_in(X, rng);
      const Vector u = draw_in(U, rng);
      const Vector& base = axis == Axis::State ? x : u;
      // Steps have norm delta; a step leaving the box is flipped, and only
      // clamped when both directions leave.
      Vector moved;
      double step_norm = 0.0;
      for (int attempt = 0; attempt < 100 && !(step_norm > 0); ++attempt) {
        Vector dir(perturbed.dim());
        for (int k = 0; k < perturbed.dim(); ++k) dir[k] = normal(rng);
        if (dir.norm() == 0) continue;
        const Vector step = delta * dir.normalized();
        moved = base + step;
        if (!perturbed.contains(moved)) moved = base - step;
        if (!perturbed.contains(moved)) moved = perturbed.clamp(base + step);
        step_norm = (moved - base).norm();
      }
      if (!(step_norm > 0)) continue;
      const Vector f0 = sys.step(x, u);
      const Vector f1 = axis == Axis::State ? sys.step(moved, u) : sys.step(x, moved);
      batch_max = std::max(batch_max, (f1 - f0).norm() / step_norm);
    }
    est.batch_maxima.push_back(batch_max);
  }

  const auto [mn, mx] = std::minmax_element(est.batch_maxima.begin(), est.batch_maxima.end());
  const double top = *mx;
  if (!(top - *mn > 1e-8 * std::max(top, std::numeric_limits<double>::min()))) {
    est.degenerate = true;
    est.value = top;
    est.fit_location = top;
    est.fit_ci_upper = 1.1 * top;
    return est;
  }
  const ReverseWeibullFit fit = fit_reverse_weibull(est.batch_maxima);
  est.value = fit.location;
  est.fit_location = fit.location;
  est.fit_scale = fit.scale;
  est.fit_shape = fit.shape;
  est.fit_ci_upper = fit.ci_upper;
  est.ci_bounded = fit.ci_bounded;
  return est;
}

}  // namespace deltaiss
