#pragma once

// Independent reference computations for the tests. Nothing here calls the
// library's evaluation paths; the net is read only through its raw arrays.

#include "deltaiss/network.hpp"
#include "deltaiss/sampling.hpp"
#include "deltaiss/training.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

namespace oracle {

using deltaiss::Activation;
using deltaiss::LyapunovNet;
using deltaiss::Matrix;
using deltaiss::Vector;

inline double act(Activation a, double v) {
  return a == Activation::Tanh ? std::tanh(v) : std::max(v, 0.0);
}

/// Layer recursion with scalar loops.
inline double V(const LyapunovNet& net, const Vector& x, const Vector& xh) {
  std::vector<double> cur;
  for (Eigen::Index i = 0; i < x.size(); ++i) cur.push_back(x[i]);
  for (Eigen::Index i = 0; i < xh.size(); ++i) cur.push_back(xh[i]);
  const int l = net.hidden_layers();
  for (int layer = 0; layer <= l; ++layer) {
    const Matrix& W = net.weights()[layer];
    const Vector& b = net.biases()[layer];
    std::vector<double> next(static_cast<std::size_t>(W.rows()));
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      double s = b[r];
      for (Eigen::Index c = 0; c < W.cols(); ++c) s += W(r, c) * cur[static_cast<std::size_t>(c)];
      next[static_cast<std::size_t>(r)] = layer < l ? act(net.activation(), s) : s;
    }
    cur = std::move(next);
  }
  return cur[0];
}

/// The certificate matrix written out entry by entry from its block description.
inline Matrix P(const LyapunovNet& net) {
  const auto& w = net.widths();
  int order = 0;
  for (int v : w) order += v;
  Matrix p = Matrix::Zero(order, order);
  std::vector<int> off(w.size(), 0);
  for (std::size_t i = 1; i < w.size(); ++i) off[i] = off[i - 1] + w[i - 1];
  const double LL = net.lipschitz_bound();
  for (int i = 0; i < w[0]; ++i) p(i, i) = LL * LL;
  const int l = net.hidden_layers();
  for (int k = 0; k < l; ++k) {
    for (int i = 0; i < w[k + 1]; ++i) p(off[k + 1] + i, off[k + 1] + i) = 2 * net.lambdas()[k][i];
  }
  p(order - 1, order - 1) = 1.0;
  for (int k = 0; k <= l; ++k) {
    const Matrix& W = net.weights()[k];
    for (int a = 0; a < W.rows(); ++a) {
      const double lam = k < l ? net.lambdas()[k][a] : 1.0;
      for (int b = 0; b < W.cols(); ++b) {
        // block (k, k+1) = -W^T Lambda: row off[k]+b, column off[k+1]+a
        p(off[k] + b, off[k + 1] + a) = -W(a, b) * lam;
        p(off[k + 1] + a, off[k] + b) = -W(a, b) * lam;
      }
    }
  }
  return p;
}

/// log det via eigenvalues; NaN when not PD.
inline double logdet(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  double s = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    if (!(es.eigenvalues()[i] > 0)) return std::numeric_limits<double>::quiet_NaN();
    s += std::log(es.eigenvalues()[i]);
  }
  return s;
}

inline double min_eig(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double hinge(double r) { return r > 0 ? r : 0.0; }

/// Total training loss of one batch, from first principles.
inline double total_loss(const LyapunovNet& net, double eta, const deltaiss::PairBatch& batch,
                         const deltaiss::Hyperparams& hp, double L) {
  const auto& t = hp.templates;
  double risk = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& sp = batch.state_pairs[i];
    const auto& np = batch.next_pairs[i];
    const double v = V(net, sp.first, sp.second);
    const double vn = V(net, np.first, np.second);
    const double g = (sp.first - sp.second).norm();
    const double du = (batch.input_pairs[i].first - batch.input_pairs[i].second).norm();
    risk += hp.c0 * hinge(-v + t.alpha1.k * std::pow(g, t.alpha1.gamma) - eta);
    risk += hp.c1 * hinge(v - t.alpha2.k * std::pow(g, t.alpha2.gamma) - eta);
    risk += hp.c2 * hinge(vn - v + t.alpha3.k * std::pow(g, t.alpha3.gamma) -
                          t.sigma.k * std::pow(du, t.sigma.gamma) - eta);
  }
  return risk - hp.cl * logdet(P(net)) + hinge(L * hp.eps + eta);
}

/// Random net with random multipliers, Gaussian weights of the given scale.
inline LyapunovNet random_net(std::uint64_t seed, int n, std::vector<int> hidden, Activation a,
                              double LL, double scale, double lambda_spread = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  LyapunovNet net(n, std::move(hidden), a, LL);
  for (auto& W : net.weights()) {
    for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = scale * normal(rng) / std::sqrt(double(W.cols()));
  }
  for (auto& b : net.biases()) {
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = 0.1 * normal(rng);
  }
  for (auto& lam : net.lambdas()) {
    for (Eigen::Index i = 0; i < lam.size(); ++i) lam[i] = std::exp(lambda_spread * normal(rng));
  }
  return net;
}

}  // namespace oracle
