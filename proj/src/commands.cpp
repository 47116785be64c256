#include "deltaiss/commands.hpp"

#include "deltaiss/network.hpp"
#include "deltaiss/sampling.hpp"
#include "deltaiss/training.hpp"
#include "deltaiss/verify.hpp"
#include "text_util.hpp"

#include <nlohmann/json.hpp>

#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <unistd.h>

namespace deltaiss {

namespace fs = std::filesystem;
using nlohmann::json;

RunLock::RunLock(const fs::path& dir) : lock_path_(dir / ".lock") {
  fs::create_directories(dir);
  const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw std::runtime_error("run directory '" + dir.string() +
                               "' is in use (remove " + lock_path_.string() + " if stale)");
    }
    throw std::runtime_error("cannot lock '" + dir.string() + "': " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(lock_path_, ec);
}

namespace {

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << content;
  if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

RunConfig effective(const RunConfig& cfg) {
  RunConfig c = cfg;
  if (c.deterministic) c.hp.threads = 1;
  return c;
}

json estimate_json(const LipschitzEstimate& e) {
  return json{{"value", e.value},
              {"ci_upper", e.fit_ci_upper},
              {"ci_bounded", e.ci_bounded},
              {"degenerate", e.degenerate},
              {"location", e.fit_location},
              {"scale", e.fit_scale},
              {"shape", e.fit_shape},
              {"n_batches", e.n_batches}};
}

json constants_json(const SystemConstants& sc, const RunConfig& cfg) {
  json j{{"Lx", sc.Lx},
         {"Lu", sc.Lu},
         {"mode", cfg.lipschitz_mode == LipschitzMode::Point ? "point" : "ci95"}};
  if (sc.state_estimate) j["state_estimate"] = estimate_json(*sc.state_estimate);
  if (sc.input_estimate) j["input_estimate"] = estimate_json(*sc.input_estimate);
  return j;
}

json loss_json(const LossBreakdown& l) {
  return json{{"L0", l.L0}, {"L1", l.L1}, {"L2", l.L2}, {"risk", l.risk},
              {"LP", l.LP}, {"Lv", l.Lv}, {"total", l.total()}};
}

std::string sig6(double v) {
  std::ostringstream o;
  o << std::setprecision(6) << v;
  return o.str();
}

std::pair<SampleSet, SampleSet> sample_sets(const RunConfig& cfg, const DiscreteSystem& sys) {
  return {build_epsilon_net(sys.state_box(), cfg.state_eps()),
          build_epsilon_net(sys.input_box(), cfg.input_eps())};
}

std::vector<Vector> corners_or(const std::vector<Vector>& given, const Box& box) {
  if (!given.empty()) return given;
  return {box.lower(), box.upper()};
}

}  // namespace

SystemConstants resolve_system_constants(const RunConfig& cfg, const DiscreteSystem& sys) {
  SystemConstants sc;
  auto pick = [&](const LipschitzEstimate& e) {
    return cfg.lipschitz_mode == LipschitzMode::Point ? e.value : e.fit_ci_upper;
  };
  const std::uint64_t seed = cfg.lipschitz_seed();
  if (cfg.lipschitz_x) {
    sc.Lx = *cfg.lipschitz_x;
  } else {
    sc.state_estimate = estimate_system_lipschitz(sys, Axis::State, cfg.lip_batches,
                                                  cfg.lip_batch_size, cfg.lip_delta, seed);
    sc.Lx = pick(*sc.state_estimate);
  }
  if (cfg.lipschitz_u) {
    sc.Lu = *cfg.lipschitz_u;
  } else {
    sc.input_estimate = estimate_system_lipschitz(sys, Axis::Input, cfg.lip_batches,
                                                  cfg.lip_batch_size, cfg.lip_delta,
                                                  text::mix(seed + 1));
    sc.Lu = pick(*sc.input_estimate);
  }
  return sc;
}

double certificate_constant(const Templates& t, double LL, const SystemConstants& sc,
                            const DiscreteSystem& sys) {
  const double Dx = sys.state_box().diameter();
  const double Du = sys.input_box().diameter();
  return composite_L(LL, sc.Lx, sc.Lu, classk_lipschitz(t.alpha1, Dx),
                     classk_lipschitz(t.alpha2, Dx), classk_lipschitz(t.alpha3, Dx),
                     classk_lipschitz(t.sigma, Du));
}

int cmd_estimate_lipschitz(const RunConfig& in, std::ostream& out, std::ostream&) {
  const RunConfig cfg = effective(in);
  const DiscreteSystem sys = make_system(cfg);
  RunLock lock(cfg.out_dir);

  const std::uint64_t seed = cfg.lipschitz_seed();
  const auto ex = estimate_system_lipschitz(sys, Axis::State, cfg.lip_batches, cfg.lip_batch_size,
                                            cfg.lip_delta, seed);
  const auto eu = estimate_system_lipschitz(sys, Axis::Input, cfg.lip_batches, cfg.lip_batch_size,
                                            cfg.lip_delta, text::mix(seed + 1));
  const bool point = cfg.lipschitz_mode == LipschitzMode::Point;
  const double Lx = point ? ex.value : ex.fit_ci_upper;
  const double Lu = point ? eu.value : eu.fit_ci_upper;

  json j{{"system", sys.name()},
         {"mode", point ? "point" : "ci95"},
         {"Lx", Lx},
         {"Lu", Lu},
         {"state_estimate", estimate_json(ex)},
         {"input_estimate", estimate_json(eu)},
         {"seed_lipschitz", seed}};
  write_file(fs::path(cfg.out_dir) / "lipschitz.json", j.dump(2) + "\n");

  out << "system: " << sys.name() << "\n"
      << "Lx: " << sig6(Lx) << " (point " << sig6(ex.value) << ", ci95 " << sig6(ex.fit_ci_upper)
      << ")\n"
      << "Lu: " << sig6(Lu) << " (point " << sig6(eu.value) << ", ci95 " << sig6(eu.fit_ci_upper)
      << ")\n";
  return kExitOk;
}

int cmd_train(const RunConfig& in, std::ostream& out, std::ostream&) {
  RunConfig cfg = effective(in);
  cfg.hp.seed = cfg.train_seed();
  const DiscreteSystem sys = make_system(cfg);
  const fs::path dir(cfg.out_dir);
  RunLock lock(dir);
  write_file(dir / "config.txt", to_text(in));

  const SystemConstants sc = resolve_system_constants(cfg, sys);
  const double L = certificate_constant(cfg.hp.templates, cfg.hp.lipschitz_bound, sc, sys);
  const auto [states, inputs] = sample_sets(cfg, sys);
  out << "samples: " << states.size() << " states (radius " << sig6(states.radius) << "), "
      << inputs.size() << " inputs (radius " << sig6(inputs.radius) << ")\n"
      << "L: " << sig6(L) << "\n";

  auto [st, rep] = train(sys, states, inputs, cfg.hp, L);

  write_file(dir / "model.txt", serialize(st.net, ModelMetadata{cfg.hp.eps}));

  std::ostringstream trace;
  trace << "epoch,L0,L1,L2,LP,Lv,eta\n";
  for (const auto& t : st.trace) {
    trace << t.epoch << ',' << text::fmt(t.loss.L0) << ',' << text::fmt(t.loss.L1) << ','
          << text::fmt(t.loss.L2) << ',' << text::fmt(t.loss.LP) << ',' << text::fmt(t.loss.Lv)
          << ',' << text::fmt(t.eta) << '\n';
  }
  write_file(dir / "loss_trace.csv", trace.str());

  json j{{"system", sys.name()},
         {"converged", rep.converged},
         {"stop_reason", rep.stop_reason},
         {"final_eta", rep.final_eta},
         {"final_loss", loss_json(rep.final_loss)},
         {"epochs_used", rep.epochs_used},
         {"wall_time", rep.wall_time},
         {"L", rep.L},
         {"eps", rep.eps},
         {"validity", rep.final_eta + rep.L * rep.eps},
         {"rejected_steps", rep.rejected_steps},
         {"lipschitz", constants_json(sc, cfg)},
         {"seeds", {{"train", cfg.hp.seed}, {"lipschitz", cfg.lipschitz_seed()}}}};
  if (rep.last_check) {
    const auto& c = *rep.last_check;
    j["last_check"] = json{{"risk_zero", c.risk_zero},
                           {"validity_zero", c.validity_zero},
                           {"barrier_ok", c.barrier_ok},
                           {"coarsened", c.coarsened}};
    if (c.eta_star) j["last_check"]["eta_star"] = *c.eta_star;
  }
  write_file(dir / "train_report.json", j.dump(2) + "\n");

  out << (rep.converged ? "converged" : "not converged") << " after " << rep.epochs_used
      << " epochs (" << rep.stop_reason << ")\n"
      << "eta: " << sig6(rep.final_eta) << "\n"
      << "eta + L eps: " << sig6(rep.final_eta + rep.L * rep.eps) << "\n";
  if (!rep.converged) {
    out << "no incremental stability conclusion can be drawn from this run\n";
    return kExitNegative;
  }
  return kExitOk;
}

int cmd_certify(const RunConfig& in, const std::string& model_path, std::ostream& out,
                std::ostream& err) {
  const RunConfig cfg = effective(in);
  const DiscreteSystem sys = make_system(cfg);
  ModelMetadata meta;
  const LyapunovNet net = deserialize(read_file(model_path), sys.state_dim(), &meta);
  const fs::path dir(cfg.out_dir);
  RunLock lock(dir);

  if (meta.eps && *meta.eps != cfg.hp.eps) {
    err << "warning: model was trained for eps = " << text::fmt(*meta.eps)
        << "; certifying with eps = " << text::fmt(cfg.hp.eps) << " from the config\n";
  }
  if (net.lipschitz_bound() != cfg.hp.lipschitz_bound) {
    err << "warning: model LL = " << text::fmt(net.lipschitz_bound()) << " differs from config LL = "
        << text::fmt(cfg.hp.lipschitz_bound) << "; using the model's value\n";
  }

  const SystemConstants sc = resolve_system_constants(cfg, sys);
  const double L = certificate_constant(cfg.hp.templates, net.lipschitz_bound(), sc, sys);
  const auto [states, inputs] = sample_sets(cfg, sys);
  ScpOptions opts;
  opts.budget = cfg.hp.scp_budget;
  opts.allow_coarsening = cfg.allow_coarsening;
  opts.threads = cfg.hp.threads;
  const CertificationReport rep =
      certify(net, states, inputs, sys, cfg.hp.templates, L, cfg.hp.eps, opts);

  json j = json::parse(to_json(rep));
  j["lipschitz"] = constants_json(sc, cfg);
  j["model"] = model_path;
  if (cfg.refine > 0) {
    const GridOracleResult g =
        grid_oracle(net, sys, states, inputs, cfg.hp.templates, cfg.refine, cfg.grid_budget);
    j["grid_oracle"] = json{{"refine", cfg.refine},
                            {"lower_bound", g.worst[0]},
                            {"upper_bound", g.worst[1]},
                            {"decrease", g.worst[2]},
                            {"n_states", g.n_states},
                            {"n_inputs", g.n_inputs}};
    out << "grid oracle (refine " << cfg.refine << "): worst residuals " << sig6(g.worst[0]) << ", "
        << sig6(g.worst[1]) << ", " << sig6(g.worst[2]) << "\n";
  }
  write_file(dir / "certification.json", j.dump(2) + "\n");

  out << "eta_star: " << sig6(rep.eta_star) << "\n"
      << "L: " << sig6(rep.L) << "\n"
      << "eps: " << sig6(rep.eps) << "\n"
      << "margin: " << sig6(rep.margin) << "\n"
      << "psd_ok: " << (rep.psd_ok ? "true" : "false") << "\n"
      << "verdict: " << to_string(rep.verdict) << "\n";
  if (rep.coarsened) out << "note: sample sets were coarsened to fit the evaluation budget\n";
  return rep.verdict == Verdict::Certified ? kExitOk : kExitNegative;
}

int cmd_simulate(const RunConfig& in, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = effective(in);
  if (cfg.horizon < 0) throw std::invalid_argument("simulate: horizon must be >= 0");
  const DiscreteSystem sys = make_system(cfg);
  const fs::path dir(cfg.out_dir);
  RunLock lock(dir);

  const auto x0s = corners_or(cfg.sim_x0, sys.state_box());
  const auto us = corners_or(cfg.sim_u, sys.input_box());
  for (std::size_t i = 0; i < us.size(); ++i) {
    const std::vector<Vector> inputs(static_cast<std::size_t>(cfg.horizon), us[i]);
    std::vector<Trajectory> trajs;
    for (std::size_t j = 0; j < x0s.size(); ++j) {
      Trajectory t = simulate_until_exit(sys, x0s[j], inputs);
      if (t.states.size() < inputs.size() + 1) {
        err << "warning: trajectory from " << text::join(x0s[j]) << " under u = "
            << text::join(us[i]) << " left the state box at step " << t.states.size() - 1 << "\n";
      }
      const std::string name =
          "traj_u" + std::to_string(i + 1) + "_x" + std::to_string(j + 1) + ".csv";
      std::ostringstream csv;
      write_trajectory_csv(csv, t, sys.input_dim());
      write_file(dir / name, csv.str());
      out << "wrote " << (dir / name).string() << "\n";
      trajs.push_back(std::move(t));
    }
    if (trajs.size() >= 2) {
      const std::size_t n = std::min(trajs[0].states.size(), trajs[1].states.size());
      std::ostringstream csv;
      csv << "k,gap\n";
      for (std::size_t k = 0; k < n; ++k) {
        csv << k << ',' << text::fmt((trajs[0].states[k] - trajs[1].states[k]).norm()) << '\n';
      }
      const std::string name = "gap_u" + std::to_string(i + 1) + ".csv";
      write_file(dir / name, csv.str());
      out << "wrote " << (dir / name).string() << "\n";
    }
  }
  return kExitOk;
}

int cmd_falsify(const RunConfig& in, std::ostream& out, std::ostream&) {
  const RunConfig cfg = effective(in);
  const DiscreteSystem sys = make_system(cfg);
  const fs::path dir(cfg.out_dir);
  RunLock lock(dir);

  const auto rep = falsify_delta_iss(sys, cfg.falsify_trials, std::max(1, cfg.horizon),
                                     cfg.falsify_seed());
  json j{{"system", sys.name()},
         {"trials", rep.trials},
         {"horizon", rep.horizon},
         {"max_gap_growth", rep.max_gap_growth},
         {"contraction_ratio", rep.contraction_ratio},
         {"input_gain", rep.input_gain},
         {"worst_excess", rep.worst_excess},
         {"exits", rep.exits},
         {"violation", rep.violation},
         {"seed_falsify", cfg.falsify_seed()}};
  write_file(dir / "falsify.json", j.dump(2) + "\n");
  out << "max gap growth under identical inputs: " << sig6(rep.max_gap_growth) << "\n"
      << "worst excess over calibrated bound: " << sig6(rep.worst_excess) << "\n"
      << (rep.violation ? "violation found" : "no violation found") << "\n";
  return rep.violation ? kExitNegative : kExitOk;
}

}  // namespace deltaiss
