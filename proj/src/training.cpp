#include "deltaiss/training.hpp"

#include "deltaiss/verify.hpp"
#include "text_util.hpp"

#include <Eigen/Cholesky>

#include <chrono>
#include <cmath>

namespace deltaiss {

void Hyperparams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string("Hyperparams: ") + name + " must be > 0");
    }
  };
  positive(c0, "c0");
  positive(c1, "c1");
  positive(c2, "c2");
  positive(cl, "cl");
  positive(lipschitz_bound, "lipschitz_bound");
  positive(eps, "eps");
  positive(init_scale, "init_scale");
  positive(lr_net, "lr_net");
  positive(lr_eta, "lr_eta");
  positive(adam_epsilon, "adam_epsilon");
  positive(scp_budget, "scp_budget");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw std::invalid_argument("Hyperparams: Adam betas must lie in [0, 1)");
  }
  if (n_ep < 0) throw std::invalid_argument("Hyperparams: n_ep must be >= 0");
  if (n_b < 1) throw std::invalid_argument("Hyperparams: n_b must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("Hyperparams: batch_size must be >= 1");
  if (check_every < 1) throw std::invalid_argument("Hyperparams: check_every must be >= 1");
  if (threads < 1) throw std::invalid_argument("Hyperparams: threads must be >= 1");
  if (max_wall_seconds < 0) throw std::invalid_argument("Hyperparams: max_wall_seconds must be >= 0");
  if (hidden.empty()) throw std::invalid_argument("Hyperparams: at least one hidden layer");
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("Hyperparams: hidden widths must be >= 1");
  }
}

namespace {

Vector stack(const Vector& a, const Vector& b) {
  Vector x0(a.size() + b.size());
  x0 << a, b;
  return x0;
}

double V(const LyapunovNet& net, const VectorPair& p) { return net.evaluate(stack(p.first, p.second)); }

double gap(const VectorPair& p) { return (p.first - p.second).norm(); }

double hinge(double r) { return r > 0 ? r : 0.0; }

void require_next(const PairBatch& batch) {
  if (!batch.has_next()) throw std::invalid_argument("loss_L2: batch has no next states");
}

}  // namespace

double loss_L0(const LyapunovNet& net, double eta, const PairBatch& batch, const KTemplate& alpha1) {
  double sum = 0.0;
  for (const auto& p : batch.state_pairs) sum += hinge(-V(net, p) + alpha1(gap(p)) - eta);
  return sum;
}

double loss_L1(const LyapunovNet& net, double eta, const PairBatch& batch, const KTemplate& alpha2) {
  double sum = 0.0;
  for (const auto& p : batch.state_pairs) sum += hinge(V(net, p) - alpha2(gap(p)) - eta);
  return sum;
}

double loss_L2(const LyapunovNet& net, double eta, const PairBatch& batch, const KTemplate& alpha3,
               const KTemplate& sigma) {
  require_next(batch);
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& sp = batch.state_pairs[i];
    sum += hinge(V(net, batch.next_pairs[i]) - V(net, sp) + alpha3(gap(sp)) -
                 sigma(gap(batch.input_pairs[i])) - eta);
  }
  return sum;
}

double lyapunov_risk(const LyapunovNet& net, double eta, const PairBatch& batch,
                     const Hyperparams& hp) {
  const Templates& t = hp.templates;
  return hp.c0 * loss_L0(net, eta, batch, t.alpha1) + hp.c1 * loss_L1(net, eta, batch, t.alpha2) +
         hp.c2 * loss_L2(net, eta, batch, t.alpha3, t.sigma);
}

double loss_P(const LyapunovNet& net, double cl) { return -cl * logdet_P(assemble_P(net)); }

double loss_v(double eta, double L, double eps) { return hinge(L * eps + eta); }

GradientResult gradients(const LyapunovNet& net, double eta, const PairBatch& batch,
                         const Hyperparams& hp, double L) {
  require_next(batch);
  const Templates& t = hp.templates;
  GradientResult out;
  out.grad.net = net.zero_gradient();
  double deta = 0.0;

  ForwardTape tape, tape_next;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& sp = batch.state_pairs[i];
    const auto& np = batch.next_pairs[i];
    const double v = net.evaluate(stack(sp.first, sp.second), tape);
    const double vn = net.evaluate(stack(np.first, np.second), tape_next);
    const double g = gap(sp);
    const double r0 = -v + t.alpha1(g) - eta;
    const double r1 = v - t.alpha2(g) - eta;
    const double r2 = vn - v + t.alpha3(g) - t.sigma(gap(batch.input_pairs[i])) - eta;
    out.loss.L0 += hinge(r0);
    out.loss.L1 += hinge(r1);
    out.loss.L2 += hinge(r2);

    // Hinges are active at the kink (slope 1 at r = 0).
    const double a0 = r0 >= 0 ? hp.c0 : 0.0;
    const double a1 = r1 >= 0 ? hp.c1 : 0.0;
    const double a2 = r2 >= 0 ? hp.c2 : 0.0;
    const double up_v = -a0 + a1 - a2;
    if (up_v != 0.0) net.backward(tape, up_v, out.grad.net);
    if (a2 != 0.0) net.backward(tape_next, a2, out.grad.net);
    deta -= a0 + a1 + a2;
  }
  out.loss.risk = hp.c0 * out.loss.L0 + hp.c1 * out.loss.L1 + hp.c2 * out.loss.L2;

  const CertificateMatrix cm = assemble_P(net);
  out.loss.LP = -hp.cl * logdet_P(cm);
  const Matrix G = cm.P.llt().solve(Matrix::Identity(cm.order(), cm.order()));
  accumulate_logdet_gradient(net, G, -hp.cl, out.grad.net);

  out.loss.Lv = loss_v(eta, L, hp.eps);
  if (L * hp.eps + eta >= 0) deta += 1.0;
  out.grad.eta = deta;
  return out;
}

Optimizer::Optimizer(OptimizerKind kind, std::size_t size, double beta1, double beta2,
                     double epsilon)
    : kind_(kind), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  if (kind_ == OptimizerKind::Adam) {
    m_.assign(size, 0.0);
    v_.assign(size, 0.0);
  }
}

void Optimizer::step(std::vector<double>& params, const std::vector<double>& grad,
                     const std::vector<double>& lr) {
  if (grad.size() != params.size() || lr.size() != params.size()) {
    throw std::invalid_argument("Optimizer::step: size mismatch");
  }
  if (kind_ == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr[i] * grad[i];
    return;
  }
  if (m_.size() != params.size()) throw std::invalid_argument("Optimizer::step: size mismatch");
  beta1_t_ *= beta1_;
  beta2_t_ *= beta2_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double mhat = m_[i] / (1.0 - beta1_t_);
    const double vhat = v_[i] / (1.0 - beta2_t_);
    params[i] -= lr[i] * mhat / (std::sqrt(vhat) + epsilon_);
  }
}

ConvergenceCheck check_convergence(const LyapunovNet& net, double eta, const DiscreteSystem& sys,
                                   const SampleSet& states, const SampleSet& inputs,
                                   const Hyperparams& hp, double L) {
  ConvergenceCheck c;
  const CertificateMatrix cm = assemble_P(net);
  c.barrier_ok = cm.logdet.has_value() && *cm.logdet >= 0;

  // Coarsening only raises eps, so a validity failure at hp.eps is final and
  // the expensive exhaustive pass can be skipped.
  c.validity_zero = eta + L * hp.eps <= 0;
  if (!c.barrier_ok || !c.validity_zero) return c;

  ScpOptions opts;
  opts.budget = hp.scp_budget;
  opts.allow_coarsening = true;
  opts.threads = hp.threads;
  opts.stop_above = eta;
  const ScpResult scp = scp_residual(net, states, inputs, sys, hp.templates, opts);
  c.coarsened = scp.coarsened;
  c.risk_zero = scp.complete && scp.eta_star <= eta;
  if (scp.complete) c.eta_star = scp.eta_star;
  const double eps = std::max({hp.eps, scp.state_radius, scp.input_radius});
  c.validity_zero = eta + L * eps <= 0;
  return c;
}

std::pair<TrainState, TrainingReport> train(const DiscreteSystem& sys, const SampleSet& states,
                                            const SampleSet& inputs, const Hyperparams& hp,
                                            double L) {
  hp.validate();
  if (!(L >= 0) || !std::isfinite(L)) throw std::invalid_argument("train: L must be >= 0");
  const double slack = 1e-12 * hp.eps;
  if (states.radius > hp.eps + slack || inputs.radius > hp.eps + slack) {
    throw std::invalid_argument("train: sample radius (" + text::fmt(states.radius) + ", " +
                                text::fmt(inputs.radius) + ") exceeds eps = " + text::fmt(hp.eps));
  }
  if (states.size() == 0 || inputs.size() == 0) {
    throw std::invalid_argument("train: empty sample set");
  }

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  TrainState st{LyapunovNet::random(sys.state_dim(), hp.hidden, hp.activation, hp.lipschitz_bound,
                                     hp.init_scale, text::mix(hp.seed ^ 0x6e6574ULL)),
                0.0, std::nullopt, 0, {}};
  if (!assemble_P(st.net).positive_definite()) {
    throw InitialFeasibilityError(
        "train: initial P(theta, Lambda) is not positive definite; lower init_scale or raise the "
        "Lipschitz bound");
  }

  const std::size_t n_net = st.net.parameter_count();
  st.optimizer.emplace(hp.optimizer, n_net + 1, hp.adam_beta1, hp.adam_beta2, hp.adam_epsilon);
  std::vector<double> base_lr(n_net + 1, hp.lr_net);
  base_lr.back() = hp.lr_eta;

  TrainingReport rep;
  rep.L = L;
  rep.eps = hp.eps;
  rep.stop_reason = hp.n_ep == 0 ? "no epochs requested" : "epochs exhausted";

  std::vector<PairBatch> batches;
  constexpr int kMaxHalvings = 20;

  for (int epoch = 0; epoch < hp.n_ep; ++epoch) {
    if (hp.max_wall_seconds > 0 && elapsed() > hp.max_wall_seconds) {
      rep.stop_reason = "wall time limit";
      break;
    }
    if (epoch == 0 || hp.resample_batches) {
      batches = make_pair_batches(states, inputs, sys, hp.n_b, hp.batch_size,
                                  text::mix(hp.seed ^ text::mix(static_cast<std::uint64_t>(epoch) + 1)));
    }

    EpochTrace tr;
    tr.epoch = epoch + 1;
    for (const auto& batch : batches) {
      const GradientResult gr = gradients(st.net, st.eta, batch, hp, L);
      tr.loss.L0 += gr.loss.L0;
      tr.loss.L1 += gr.loss.L1;
      tr.loss.L2 += gr.loss.L2;
      tr.loss.risk += gr.loss.risk;
      tr.loss.LP += gr.loss.LP;
      tr.loss.Lv += gr.loss.Lv;

      std::vector<double> g = st.net.flatten(gr.grad.net);
      g.push_back(gr.grad.eta);
      std::vector<double> params = st.net.parameters();
      params.push_back(st.eta);

      // Reject steps that leave the PD cone; retry from the same state with a
      // halved learning rate.
      std::vector<double> lr = base_lr;
      bool accepted = false;
      for (int attempt = 0; attempt <= kMaxHalvings && !accepted; ++attempt) {
        Optimizer trial = *st.optimizer;
        std::vector<double> next = params;
        trial.step(next, g, lr);
        LyapunovNet candidate = st.net;
        candidate.set_parameters(std::span<const double>(next.data(), n_net));
        if (assemble_P(candidate).positive_definite()) {
          st.net = std::move(candidate);
          st.eta = next.back();
          *st.optimizer = std::move(trial);
          accepted = true;
        } else {
          ++rep.rejected_steps;
          for (double& v : lr) v *= 0.5;
        }
      }
    }
    tr.eta = st.eta;
    st.trace.push_back(tr);
    st.epoch = epoch + 1;
    rep.final_loss = tr.loss;

    if ((epoch + 1) % hp.check_every == 0 || epoch + 1 == hp.n_ep) {
      rep.last_check = check_convergence(st.net, st.eta, sys, states, inputs, hp, L);
      if (rep.last_check->passed()) {
        rep.converged = true;
        rep.stop_reason = "converged";
        break;
      }
    }
  }

  rep.final_eta = st.eta;
  rep.epochs_used = st.epoch;
  rep.wall_time = elapsed();
  return {std::move(st), rep};
}

}  // namespace deltaiss
