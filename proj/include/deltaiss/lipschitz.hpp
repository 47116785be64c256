#pragma once

// Statistical Lipschitz estimation for the black-box system, Lipschitz
// constants of the class-K templates and the composite certificate constant.

#include "deltaiss/dynamics.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace deltaiss {

/// alpha(s) = k * s^gamma, with k > 0 and gamma >= 1.
struct KTemplate {
  double k = 1.0;
  double gamma = 1.0;

  KTemplate() = default;
  KTemplate(double k, double gamma);

  double operator()(double s) const;
};

/// alpha_1, alpha_2, alpha_3 and sigma.
struct Templates {
  KTemplate alpha1{0.00001, 1.0};
  KTemplate alpha2{1.0, 1.0};
  KTemplate alpha3{0.0001, 1.0};
  KTemplate sigma{0.0001, 1.0};
};

/// Supremum of the derivative of k*s^gamma on [0, D]: k*gamma*D^(gamma-1).
double classk_lipschitz(const KTemplate& t, double domain_diameter);

/// max{ sqrt2*LL + 2*L1, sqrt2*LL + 2*L2, sqrt2*LL*(Lx + Lu + 1) + 2*(L3 + Lsu) }.
double composite_L(double LL, double Lx, double Lu, double L1, double L2, double L3,
                   double Lsu);

/// Three-parameter reverse Weibull, F(y) = exp(-((location - y)/scale)^shape)
/// for y < location.
struct ReverseWeibullFit {
  double location = 0.0;
  double scale = 0.0;
  double shape = 0.0;
  double log_likelihood = 0.0;
  /// Upper end of the 95% profile-likelihood interval for the location.
  double ci_upper = 0.0;
  /// False when the profile stayed inside the interval up to the search limit.
  bool ci_bounded = false;
  /// True when the likelihood is unbounded as location -> max(sample)
  /// (shape < 1); location is then the sample maximum.
  bool boundary = false;
};

/// Maximum-likelihood fit by profiling over the location. Needs >= 3 values
/// with nonzero spread.
ReverseWeibullFit fit_reverse_weibull(std::span<const double> maxima);

enum class Axis { State, Input };

struct LipschitzEstimate {
  double value = 0.0;  // point estimate (fitted location)
  int n_batches = 0;
  std::vector<double> batch_maxima;
  double fit_location = 0.0;
  double fit_scale = 0.0;
  double fit_shape = 0.0;
  double fit_ci_upper = 0.0;
  /// Maxima had (numerically) no spread; value is the largest quotient and
  /// fit_ci_upper is 1.1 times that.
  bool degenerate = false;
  bool ci_bounded = false;
};

/// Per batch, draws batch_size anchors (x, u) uniformly from the boxes and a
/// perturbation of norm delta along `axis` (norm < delta only when the box
/// is narrower than delta), and records the largest
/// difference quotient |f(x',u') - f(x,u)| / |perturbation|. The batch maxima
/// are fitted with a reverse Weibull law.
LipschitzEstimate estimate_system_lipschitz(const DiscreteSystem& sys, Axis axis, int n_batches,
                                            int batch_size, double delta, std::uint64_t seed);

}  // namespace deltaiss
