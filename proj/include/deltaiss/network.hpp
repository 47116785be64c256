#pragma once

// Neural incremental Lyapunov candidate V(x, xhat): an MLP on [x; xhat] with
// slope-restricted activations, plus the block-tridiagonal matrix P(theta,
// Lambda) whose positive semidefiniteness certifies |V(a) - V(b)| <= L_L |a - b|.

#include "deltaiss/dynamics.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace deltaiss {

enum class Activation { Tanh, Relu };

std::string to_string(Activation a);
Activation activation_from_string(std::string_view s);

/// P is not positive definite, so its log-determinant barrier is infinite.
class BarrierViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Same shapes as the trainable parameters of a LyapunovNet. Lambda entries
/// are differentiated through their logarithm (lambda = exp(s)).
struct NetGradient {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  std::vector<Vector> log_lambdas;

  void set_zero();
  NetGradient& operator+=(const NetGradient& other);
  NetGradient& operator*=(double s);
};

/// Intermediate values of one forward pass, kept for backpropagation.
struct ForwardTape {
  std::vector<Vector> activations;     // x^0 .. x^{l_f}
  std::vector<Vector> preactivations;  // theta^i x^i + b^i for hidden layers
  double output = 0.0;
};

class LyapunovNet {
 public:
  LyapunovNet(int state_dim, std::vector<int> hidden, Activation activation,
              double lipschitz_bound);

  /// Gaussian weights with standard deviation init_scale / sqrt(fan_in), zero
  /// biases and unit multipliers.
  static LyapunovNet random(int state_dim, std::vector<int> hidden, Activation activation,
                            double lipschitz_bound, double init_scale, std::uint64_t seed);

  int state_dim() const { return state_dim_; }
  /// [2n, h_1, ..., h_l, 1].
  const std::vector<int>& widths() const { return widths_; }
  int hidden_layers() const { return static_cast<int>(widths_.size()) - 2; }
  Activation activation() const { return activation_; }
  double lipschitz_bound() const { return lipschitz_bound_; }

  std::vector<Matrix>& weights() { return weights_; }
  const std::vector<Matrix>& weights() const { return weights_; }
  std::vector<Vector>& biases() { return biases_; }
  const std::vector<Vector>& biases() const { return biases_; }
  /// Diagonals of Lambda_1 .. Lambda_l (one per hidden layer), all > 0.
  std::vector<Vector>& lambdas() { return lambdas_; }
  const std::vector<Vector>& lambdas() const { return lambdas_; }

  /// Throws std::invalid_argument if shapes do not chain or a multiplier is <= 0.
  void validate() const;

  /// V(x, xhat). Checks dimensions.
  double forward(const Vector& x, const Vector& xhat) const;
  /// V on a stacked input x^0 = [x; xhat].
  double evaluate(const Vector& x0) const;
  double evaluate(const Vector& x0, ForwardTape& tape) const;
  /// Per-layer hook: x^0, x^1, ..., x^{l_f}, then the scalar output as a 1-vector.
  std::vector<Vector> layer_outputs(const Vector& x0) const;

  /// Accumulates upstream * dV/dparams into grad (weights and biases only).
  void backward(const ForwardTape& tape, double upstream, NetGradient& grad) const;

  NetGradient zero_gradient() const;

  /// Flat parameter vector: per layer weights (row-major) then bias, then the
  /// logarithms of every Lambda entry.
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> flat);
  std::vector<double> flatten(const NetGradient& grad) const;
  std::size_t parameter_count() const;

 private:
  double activate(double v) const;
  double activate_slope(double v) const;

  int state_dim_;
  std::vector<int> widths_;
  Activation activation_;
  double lipschitz_bound_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
  std::vector<Vector> lambdas_;
};

struct CertificateMatrix {
  Matrix P;
  double min_eig = 0.0;
  double spectral_norm = 0.0;
  std::optional<double> logdet;  // present iff P is strictly positive definite
  std::vector<int> block_offsets;  // start row of each block; last entry = order

  int order() const { return static_cast<int>(P.rows()); }
  bool positive_definite() const { return logdet.has_value(); }
  /// min_eig >= -1e-10 * ||P||_2.
  bool numerically_psd() const;
};

/// Builds P exactly from its blocks:
///   diag  = [L_L^2 I_2n, 2 Lambda_1, ..., 2 Lambda_l, I_1]
///   (i, i+1) = -theta^i^T Lambda_{i+1} for i < l,  (l, l+1) = -theta^l^T
CertificateMatrix assemble_P(const LyapunovNet& net);

/// log det P via Cholesky. Throws BarrierViolation when P is not PD.
double logdet_P(const CertificateMatrix& cm);

/// Accumulates scale * d(log det P)/d(params) into grad, given P^{-1}.
void accumulate_logdet_gradient(const LyapunovNet& net, const Matrix& P_inverse, double scale,
                                NetGradient& grad);

/// Largest |V(a) - V(b)| / |a - b| over random probe pairs in state_box^2. Half
/// of the probes are independent uniform pairs, half are local perturbations.
double empirical_lipschitz(const LyapunovNet& net, const Box& state_box, int n_probes,
                           std::uint64_t seed);

struct ModelMetadata {
  std::optional<double> eps;  // radius the model was trained for
};

/// Versioned text format, 17 significant digits for every parameter.
std::string serialize(const LyapunovNet& net, const ModelMetadata& meta = {});
/// Throws std::runtime_error on malformed input and when expected_state_dim
/// is given and differs from the file.
LyapunovNet deserialize(std::string_view text, std::optional<int> expected_state_dim = std::nullopt,
                        ModelMetadata* meta = nullptr);

}  // namespace deltaiss
