#include "deltaiss/network.hpp"

#include "text_util.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>
#include <sstream>

namespace deltaiss {

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation activation_from_string(std::string_view s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

void NetGradient::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
  for (auto& l : log_lambdas) l.setZero();
}

NetGradient& NetGradient::operator+=(const NetGradient& other) {
  for (std::size_t i = 0; i < weights.size(); ++i) weights[i] += other.weights[i];
  for (std::size_t i = 0; i < biases.size(); ++i) biases[i] += other.biases[i];
  for (std::size_t i = 0; i < log_lambdas.size(); ++i) log_lambdas[i] += other.log_lambdas[i];
  return *this;
}

NetGradient& NetGradient::operator*=(double s) {
  for (auto& w : weights) w *= s;
  for (auto& b : biases) b *= s;
  for (auto& l : log_lambdas) l *= s;
  return *this;
}

LyapunovNet::LyapunovNet(int state_dim, std::vector<int> hidden, Activation activation,
                         double lipschitz_bound)
    : state_dim_(state_dim), activation_(activation), lipschitz_bound_(lipschitz_bound) {
  if (state_dim < 1) throw std::invalid_argument("LyapunovNet: state_dim must be >= 1");
  if (!(lipschitz_bound > 0)) throw std::invalid_argument("LyapunovNet: lipschitz bound must be > 0");
  widths_.push_back(2 * state_dim);
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("LyapunovNet: hidden widths must be >= 1");
    widths_.push_back(h);
  }
  widths_.push_back(1);
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    weights_.push_back(Matrix::Zero(widths_[i + 1], widths_[i]));
    biases_.push_back(Vector::Zero(widths_[i + 1]));
  }
  for (int i = 1; i + 1 < static_cast<int>(widths_.size()); ++i) {
    lambdas_.push_back(Vector::Ones(widths_[i]));
  }
}

LyapunovNet LyapunovNet::random(int state_dim, std::vector<int> hidden, Activation activation,
                                double lipschitz_bound, double init_scale, std::uint64_t seed) {
  LyapunovNet net(state_dim, std::move(hidden), activation, lipschitz_bound);
  std::mt19937_64 rng(text::mix(seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& w : net.weights_) {
    const double sd = init_scale / std::sqrt(static_cast<double>(w.cols()));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = sd * normal(rng);
  }
  return net;
}

void LyapunovNet::validate() const {
  const std::size_t layers = widths_.size() - 1;
  if (widths_.front() != 2 * state_dim_ || widths_.back() != 1) {
    throw std::invalid_argument("LyapunovNet: widths must start at 2n and end at 1");
  }
  if (weights_.size() != layers || biases_.size() != layers || lambdas_.size() != layers - 1) {
    throw std::invalid_argument("LyapunovNet: wrong number of parameter blocks");
  }
  for (std::size_t i = 0; i < layers; ++i) {
    if (weights_[i].rows() != widths_[i + 1] || weights_[i].cols() != widths_[i]) {
      throw std::invalid_argument("LyapunovNet: weight " + std::to_string(i) + " has wrong shape");
    }
    if (biases_[i].size() != widths_[i + 1]) {
      throw std::invalid_argument("LyapunovNet: bias " + std::to_string(i) + " has wrong size");
    }
  }
  for (std::size_t i = 0; i < lambdas_.size(); ++i) {
    if (lambdas_[i].size() != widths_[i + 1]) {
      throw std::invalid_argument("LyapunovNet: lambda " + std::to_string(i + 1) + " has wrong size");
    }
    for (Eigen::Index j = 0; j < lambdas_[i].size(); ++j) {
      if (!(lambdas_[i][j] > 0) || !std::isfinite(lambdas_[i][j])) {
        throw std::invalid_argument("LyapunovNet: lambda entries must be positive");
      }
    }
  }
}

double LyapunovNet::activate(double v) const {
  return activation_ == Activation::Tanh ? std::tanh(v) : (v > 0 ? v : 0.0);
}

double LyapunovNet::activate_slope(double v) const {
  if (activation_ == Activation::Tanh) {
    const double t = std::tanh(v);
    return 1.0 - t * t;
  }
  return v > 0 ? 1.0 : 0.0;
}

double LyapunovNet::forward(const Vector& x, const Vector& xhat) const {
  if (x.size() != state_dim_ || xhat.size() != state_dim_) {
    throw std::invalid_argument("LyapunovNet::forward: expected state dimension " +
                                std::to_string(state_dim_));
  }
  Vector x0(2 * state_dim_);
  x0 << x, xhat;
  return evaluate(x0);
}

double LyapunovNet::evaluate(const Vector& x0) const {
  Vector a = x0;
  const int l = hidden_layers();
  for (int i = 0; i < l; ++i) {
    Vector z = weights_[i] * a + biases_[i];
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = activate(z[j]);
    a = std::move(z);
  }
  return weights_[l].row(0).dot(a) + biases_[l][0];
}

double LyapunovNet::evaluate(const Vector& x0, ForwardTape& tape) const {
  const int l = hidden_layers();
  tape.activations.resize(l + 1);
  tape.preactivations.resize(l);
  tape.activations[0] = x0;
  for (int i = 0; i < l; ++i) {
    tape.preactivations[i] = weights_[i] * tape.activations[i] + biases_[i];
    Vector& a = tape.activations[i + 1];
    a.resize(tape.preactivations[i].size());
    for (Eigen::Index j = 0; j < a.size(); ++j) a[j] = activate(tape.preactivations[i][j]);
  }
  tape.output = weights_[l].row(0).dot(tape.activations[l]) + biases_[l][0];
  return tape.output;
}

std::vector<Vector> LyapunovNet::layer_outputs(const Vector& x0) const {
  ForwardTape tape;
  const double v = evaluate(x0, tape);
  std::vector<Vector> out = tape.activations;
  out.push_back(Vector::Constant(1, v));
  return out;
}

void LyapunovNet::backward(const ForwardTape& tape, double upstream, NetGradient& grad) const {
  const int l = hidden_layers();
  // delta holds dV/d(activation of the current layer), scaled by upstream.
  grad.weights[l].row(0) += upstream * tape.activations[l].transpose();
  grad.biases[l][0] += upstream;
  Vector delta = upstream * weights_[l].row(0).transpose();
  for (int i = l - 1; i >= 0; --i) {
    for (Eigen::Index j = 0; j < delta.size(); ++j) {
      delta[j] *= activate_slope(tape.preactivations[i][j]);
    }
    grad.weights[i].noalias() += delta * tape.activations[i].transpose();
    grad.biases[i] += delta;
    if (i > 0) delta = weights_[i].transpose() * delta;
  }
}

NetGradient LyapunovNet::zero_gradient() const {
  NetGradient g;
  for (const auto& w : weights_) g.weights.push_back(Matrix::Zero(w.rows(), w.cols()));
  for (const auto& b : biases_) g.biases.push_back(Vector::Zero(b.size()));
  for (const auto& lam : lambdas_) g.log_lambdas.push_back(Vector::Zero(lam.size()));
  return g;
}

std::size_t LyapunovNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights_) n += static_cast<std::size_t>(w.size());
  for (const auto& b : biases_) n += static_cast<std::size_t>(b.size());
  for (const auto& lam : lambdas_) n += static_cast<std::size_t>(lam.size());
  return n;
}

namespace {

template <class Visit>
void walk_blocks(std::size_t layers, Visit&& visit) {
  for (std::size_t i = 0; i < layers; ++i) {
    visit(0, i);  // weight i
    visit(1, i);  // bias i
  }
  for (std::size_t i = 0; i + 1 < layers; ++i) visit(2, i);  // log lambda i
}

}  // namespace

std::vector<double> LyapunovNet::parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  walk_blocks(weights_.size(), [&](int kind, std::size_t i) {
    if (kind == 0) {
      for (Eigen::Index r = 0; r < weights_[i].rows(); ++r)
        for (Eigen::Index c = 0; c < weights_[i].cols(); ++c) out.push_back(weights_[i](r, c));
    } else if (kind == 1) {
      for (Eigen::Index j = 0; j < biases_[i].size(); ++j) out.push_back(biases_[i][j]);
    } else {
      for (Eigen::Index j = 0; j < lambdas_[i].size(); ++j) out.push_back(std::log(lambdas_[i][j]));
    }
  });
  return out;
}

void LyapunovNet::set_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw std::invalid_argument("LyapunovNet::set_parameters: wrong parameter count");
  }
  std::size_t k = 0;
  walk_blocks(weights_.size(), [&](int kind, std::size_t i) {
    if (kind == 0) {
      for (Eigen::Index r = 0; r < weights_[i].rows(); ++r)
        for (Eigen::Index c = 0; c < weights_[i].cols(); ++c) weights_[i](r, c) = flat[k++];
    } else if (kind == 1) {
      for (Eigen::Index j = 0; j < biases_[i].size(); ++j) biases_[i][j] = flat[k++];
    } else {
      for (Eigen::Index j = 0; j < lambdas_[i].size(); ++j) lambdas_[i][j] = std::exp(flat[k++]);
    }
  });
}

std::vector<double> LyapunovNet::flatten(const NetGradient& grad) const {
  std::vector<double> out;
  out.reserve(parameter_count());
  walk_blocks(weights_.size(), [&](int kind, std::size_t i) {
    if (kind == 0) {
      for (Eigen::Index r = 0; r < grad.weights[i].rows(); ++r)
        for (Eigen::Index c = 0; c < grad.weights[i].cols(); ++c) out.push_back(grad.weights[i](r, c));
    } else if (kind == 1) {
      for (Eigen::Index j = 0; j < grad.biases[i].size(); ++j) out.push_back(grad.biases[i][j]);
    } else {
      for (Eigen::Index j = 0; j < grad.log_lambdas[i].size(); ++j) out.push_back(grad.log_lambdas[i][j]);
    }
  });
  return out;
}

bool CertificateMatrix::numerically_psd() const {
  return min_eig >= -1e-10 * spectral_norm;
}

CertificateMatrix assemble_P(const LyapunovNet& net) {
  net.validate();
  const auto& widths = net.widths();
  const int l = net.hidden_layers();
  CertificateMatrix cm;
  int offset = 0;
  for (int w : widths) {
    cm.block_offsets.push_back(offset);
    offset += w;
  }
  cm.block_offsets.push_back(offset);
  cm.P = Matrix::Zero(offset, offset);

  const double LL = net.lipschitz_bound();
  const int n2 = widths[0];
  cm.P.topLeftCorner(n2, n2).diagonal().setConstant(LL * LL);
  for (int i = 1; i <= l; ++i) {
    const int o = cm.block_offsets[i];
    for (int j = 0; j < widths[i]; ++j) cm.P(o + j, o + j) = 2.0 * net.lambdas()[i - 1][j];
  }
  cm.P(offset - 1, offset - 1) = 1.0;

  // Off-diagonal block (i, i+1) and its mirror, written entry by entry so the
  // matrix is symmetric by construction.
  for (int i = 0; i <= l; ++i) {
    const Matrix& W = net.weights()[i];  // widths[i+1] x widths[i]
    const int ro = cm.block_offsets[i];
    const int co = cm.block_offsets[i + 1];
    for (int a = 0; a < W.rows(); ++a) {
      const double lam = i < l ? net.lambdas()[i][a] : 1.0;
      for (int b = 0; b < W.cols(); ++b) {
        const double v = -W(a, b) * lam;
        cm.P(ro + b, co + a) = v;
        cm.P(co + a, ro + b) = v;
      }
    }
  }

  Eigen::SelfAdjointEigenSolver<Matrix> eig(cm.P, Eigen::EigenvaluesOnly);
  cm.min_eig = eig.eigenvalues().minCoeff();
  cm.spectral_norm = eig.eigenvalues().cwiseAbs().maxCoeff();
  if (cm.min_eig > 0) {
    Eigen::LLT<Matrix> llt(cm.P);
    if (llt.info() == Eigen::Success) {
      cm.logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    }
  }
  return cm;
}

double logdet_P(const CertificateMatrix& cm) {
  if (!cm.logdet) {
    throw BarrierViolation("logdet_P: P is not positive definite (min eigenvalue " +
                           text::fmt(cm.min_eig) + ")");
  }
  return *cm.logdet;
}

void accumulate_logdet_gradient(const LyapunovNet& net, const Matrix& G, double scale,
                                NetGradient& grad) {
  // d log det P = tr(G dP) with G = P^{-1}; each off-diagonal entry appears
  // twice by symmetry.
  const int l = net.hidden_layers();
  const auto& widths = net.widths();
  std::vector<int> off(widths.size());
  for (std::size_t i = 1; i < widths.size(); ++i) off[i] = off[i - 1] + widths[i - 1];

  for (int i = 0; i <= l; ++i) {
    const Matrix& W = net.weights()[i];
    const int ro = off[i], co = off[i + 1];
    for (int a = 0; a < W.rows(); ++a) {
      const double lam = i < l ? net.lambdas()[i][a] : 1.0;
      double dlam = 0.0;
      for (int b = 0; b < W.cols(); ++b) {
        const double g = G(ro + b, co + a);
        grad.weights[i](a, b) += scale * (-2.0 * lam * g);
        dlam += -2.0 * W(a, b) * g;
      }
      if (i < l) {
        dlam += 2.0 * G(co + a, co + a);
        // chain rule through lambda = exp(s)
        grad.log_lambdas[i][a] += scale * dlam * lam;
      }
    }
  }
}

double empirical_lipschitz(const LyapunovNet& net, const Box& state_box, int n_probes,
                           std::uint64_t seed) {
  if (n_probes < 1) throw std::invalid_argument("empirical_lipschitz: n_probes must be >= 1");
  if (state_box.dim() != net.state_dim()) {
    throw std::invalid_argument("empirical_lipschitz: box dimension does not match the net");
  }
  const int d = 2 * net.state_dim();
  Vector lo(d), hi(d);
  lo << state_box.lower(), state_box.lower();
  hi << state_box.upper(), state_box.upper();
  const Box joint(lo, hi);
  const double local = 1e-3 * std::max(joint.diameter(), 1e-12);

  std::mt19937_64 rng(text::mix(seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&] {
    Vector v(d);
    for (int i = 0; i < d; ++i) v[i] = lo[i] + unit(rng) * (hi[i] - lo[i]);
    return v;
  };
  double best = 0.0;
  for (int k = 0; k < n_probes; ++k) {
    const Vector a = draw();
    Vector b;
    if (k % 2 == 0) {
      b = draw();
    } else {
      Vector dir(d);
      for (int i = 0; i < d; ++i) dir[i] = normal(rng);
      b = joint.clamp(a + local * unit(rng) * dir);
    }
    const double dist = (a - b).norm();
    if (!(dist > 0)) continue;
    best = std::max(best, std::abs(net.evaluate(a) - net.evaluate(b)) / dist);
  }
  return best;
}

// Model file layout (v1):
//   deltaiss-lyapunov-net v1
//   state_dim <n>
//   widths <2n> <h1> ... <1>
//   activation <tanh|relu>
//   lipschitz_bound <LL>
//   [eps <value>]
//   weight <i> <rows> <cols>   followed by `rows` lines of row-major values
//   bias <i> <size>            followed by one line
//   lambda <i> <size>          followed by one line (i = 1..l)
//   end
std::string serialize(const LyapunovNet& net, const ModelMetadata& meta) {
  net.validate();
  std::ostringstream out;
  out << "deltaiss-lyapunov-net v1\n";
  out << "state_dim " << net.state_dim() << "\n";
  out << "widths";
  for (int w : net.widths()) out << ' ' << w;
  out << "\nactivation " << to_string(net.activation()) << "\n";
  out << "lipschitz_bound " << text::fmt17(net.lipschitz_bound()) << "\n";
  if (meta.eps) out << "eps " << text::fmt17(*meta.eps) << "\n";
  auto row = [&](const auto& v) {
    for (Eigen::Index j = 0; j < v.size(); ++j) out << (j ? " " : "") << text::fmt17(v[j]);
    out << "\n";
  };
  for (std::size_t i = 0; i < net.weights().size(); ++i) {
    const Matrix& W = net.weights()[i];
    out << "weight " << i << ' ' << W.rows() << ' ' << W.cols() << "\n";
    for (Eigen::Index r = 0; r < W.rows(); ++r) row(W.row(r));
    out << "bias " << i << ' ' << net.biases()[i].size() << "\n";
    row(net.biases()[i]);
  }
  for (std::size_t i = 0; i < net.lambdas().size(); ++i) {
    out << "lambda " << i + 1 << ' ' << net.lambdas()[i].size() << "\n";
    row(net.lambdas()[i]);
  }
  out << "end\n";
  return out.str();
}

namespace {

class LineReader {
 public:
  explicit LineReader(std::string_view text) : in_(std::string(text)) {}

  std::vector<std::string> next(const char* what) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      auto toks = text::split_ws(line);
      if (!toks.empty()) return toks;
    }
    throw std::runtime_error(std::string("model file: unexpected end of input, expected ") + what);
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::runtime_error("model file line " + std::to_string(line_no_) + ": " + msg);
  }

  std::vector<double> numbers(std::size_t count, const char* what) {
    auto toks = next(what);
    if (toks.size() != count) {
      fail(std::string(what) + ": expected " + std::to_string(count) + " values, got " +
           std::to_string(toks.size()));
    }
    std::vector<double> v(count);
    try {
      for (std::size_t i = 0; i < count; ++i) v[i] = text::parse_double(toks[i]);
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
    return v;
  }

 private:
  std::istringstream in_;
  int line_no_ = 0;
};

int to_int(const std::string& s, LineReader& rd) {
  try {
    std::size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) rd.fail("bad integer '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    rd.fail("bad integer '" + s + "'");
  }
}

}  // namespace

LyapunovNet deserialize(std::string_view text, std::optional<int> expected_state_dim,
                        ModelMetadata* meta) {
  LineReader rd(text);
  auto head = rd.next("header");
  if (head.size() != 2 || head[0] != "deltaiss-lyapunov-net") rd.fail("not a model file");
  if (head[1] != "v1") rd.fail("unsupported model version " + head[1]);

  auto expect = [&](const char* key, std::size_t min_tokens) {
    auto toks = rd.next(key);
    if (toks[0] != key || toks.size() < min_tokens) rd.fail(std::string("expected '") + key + "'");
    return toks;
  };
  const int n = to_int(expect("state_dim", 2)[1], rd);
  if (expected_state_dim && *expected_state_dim != n) {
    rd.fail("model has state dimension " + std::to_string(n) + " but the system has " +
            std::to_string(*expected_state_dim));
  }
  auto wt = expect("widths", 3);
  std::vector<int> widths;
  for (std::size_t i = 1; i < wt.size(); ++i) widths.push_back(to_int(wt[i], rd));
  if (widths.front() != 2 * n || widths.back() != 1) rd.fail("widths must run from 2n to 1");
  Activation act;
  try {
    act = activation_from_string(expect("activation", 2)[1]);
  } catch (const std::invalid_argument& e) {
    rd.fail(e.what());
  }
  const double LL = text::parse_double(expect("lipschitz_bound", 2)[1]);

  LyapunovNet net(n, std::vector<int>(widths.begin() + 1, widths.end() - 1), act, LL);
  const std::size_t layers = widths.size() - 1;
  auto toks = rd.next("weight block");
  if (toks[0] == "eps") {
    if (toks.size() != 2) rd.fail("eps needs one value");
    if (meta) meta->eps = text::parse_double(toks[1]);
    toks = rd.next("weight block");
  }
  for (std::size_t i = 0; i < layers; ++i) {
    if (toks[0] != "weight" || toks.size() != 4 || to_int(toks[1], rd) != static_cast<int>(i)) {
      rd.fail("expected 'weight " + std::to_string(i) + "'");
    }
    const int rows = to_int(toks[2], rd), cols = to_int(toks[3], rd);
    if (rows != widths[i + 1] || cols != widths[i]) rd.fail("weight block has inconsistent shape");
    for (int r = 0; r < rows; ++r) {
      auto v = rd.numbers(cols, "weight row");
      for (int c = 0; c < cols; ++c) net.weights()[i](r, c) = v[c];
    }
    toks = rd.next("bias block");
    if (toks[0] != "bias" || toks.size() != 3 || to_int(toks[2], rd) != rows) {
      rd.fail("expected 'bias " + std::to_string(i) + "'");
    }
    auto b = rd.numbers(rows, "bias");
    for (int r = 0; r < rows; ++r) net.biases()[i][r] = b[r];
    toks = rd.next(i + 1 < layers ? "weight block" : "lambda block");
  }
  for (std::size_t i = 0; i + 1 < layers; ++i) {
    if (toks[0] != "lambda" || toks.size() != 3 || to_int(toks[1], rd) != static_cast<int>(i + 1)) {
      rd.fail("missing 'lambda " + std::to_string(i + 1) + "' block");
    }
    const int size = to_int(toks[2], rd);
    if (size != widths[i + 1]) rd.fail("lambda block has inconsistent size");
    auto v = rd.numbers(size, "lambda");
    for (int j = 0; j < size; ++j) net.lambdas()[i][j] = v[j];
    toks = rd.next("end");
  }
  if (toks[0] != "end") rd.fail("expected 'end'");
  try {
    net.validate();
  } catch (const std::invalid_argument& e) {
    rd.fail(e.what());
  }
  return net;
}

}  // namespace deltaiss
