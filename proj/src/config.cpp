#include "deltaiss/config.hpp"

#include "deltaiss/process_oracle.hpp"
#include "text_util.hpp"

#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>

namespace deltaiss {

namespace {

constexpr std::uint64_t kTrainTag = 0x747261696eULL;
constexpr std::uint64_t kLipschitzTag = 0x6c6970ULL;
constexpr std::uint64_t kFalsifyTag = 0x66616c73ULL;

double to_double(const std::string& v) { return text::parse_double(v); }

long long to_integer(const std::string& v) {
  const std::string t = text::trim(v);
  long long out = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw std::invalid_argument("not an integer: '" + t + "'");
  }
  return out;
}

int to_int(const std::string& v) {
  const long long x = to_integer(v);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw std::invalid_argument("integer out of range: '" + v + "'");
  }
  return static_cast<int>(x);
}

std::uint64_t to_u64(const std::string& v) {
  const std::string t = text::trim(v);
  std::uint64_t out = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw std::invalid_argument("not an unsigned integer: '" + t + "'");
  }
  return out;
}

bool to_bool(const std::string& v) {
  const std::string t = text::trim(v);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw std::invalid_argument("not a boolean: '" + t + "'");
}

// Components separated by spaces or commas.
Vector to_vector(const std::string& v) {
  std::string s = v;
  for (char& c : s) {
    if (c == ',') c = ' ';
  }
  const auto toks = text::split_ws(s);
  if (toks.empty()) throw std::invalid_argument("empty vector");
  Vector out(static_cast<Eigen::Index>(toks.size()));
  for (std::size_t i = 0; i < toks.size(); ++i) out[static_cast<Eigen::Index>(i)] = to_double(toks[i]);
  return out;
}

// Vectors separated by ';'.
std::vector<Vector> to_vector_list(const std::string& v) {
  std::vector<Vector> out;
  for (const auto& part : text::split(v, ';')) {
    if (!text::trim(part).empty()) out.push_back(to_vector(part));
  }
  return out;
}

std::vector<int> to_int_list(const std::string& v) {
  std::string s = v;
  for (char& c : s) {
    if (c == ',') c = ' ';
  }
  std::vector<int> out;
  for (const auto& t : text::split_ws(s)) out.push_back(to_int(t));
  return out;
}

std::string vec_text(const Vector& v) { return text::join(v, " "); }

std::string list_text(const std::vector<Vector>& vs) {
  std::string out;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (i) out += "; ";
    out += vec_text(vs[i]);
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"system", [](RunConfig& c, const std::string& v) { c.system = text::trim(v); }},
      {"tau", [](RunConfig& c, const std::string& v) { c.tau = to_double(v); }},
      {"a", [](RunConfig& c, const std::string& v) { c.a = to_double(v); }},
      {"Ra", [](RunConfig& c, const std::string& v) { c.Ra = to_double(v); }},
      {"La", [](RunConfig& c, const std::string& v) { c.La = to_double(v); }},
      {"J", [](RunConfig& c, const std::string& v) { c.J = to_double(v); }},
      {"B", [](RunConfig& c, const std::string& v) { c.B = to_double(v); }},
      {"kb", [](RunConfig& c, const std::string& v) { c.kb = to_double(v); }},
      {"gain", [](RunConfig& c, const std::string& v) { c.gain = to_double(v); }},
      {"state_lower", [](RunConfig& c, const std::string& v) { c.state_lower = to_vector(v); }},
      {"state_upper", [](RunConfig& c, const std::string& v) { c.state_upper = to_vector(v); }},
      {"input_lower", [](RunConfig& c, const std::string& v) { c.input_lower = to_vector(v); }},
      {"input_upper", [](RunConfig& c, const std::string& v) { c.input_upper = to_vector(v); }},
      {"external_command",
       [](RunConfig& c, const std::string& v) { c.external_command = text::trim(v); }},

      {"eps", [](RunConfig& c, const std::string& v) { c.hp.eps = to_double(v); }},
      {"eps_x", [](RunConfig& c, const std::string& v) { c.eps_x = to_double(v); }},
      {"eps_u", [](RunConfig& c, const std::string& v) { c.eps_u = to_double(v); }},
      {"LL", [](RunConfig& c, const std::string& v) { c.hp.lipschitz_bound = to_double(v); }},
      {"k1", [](RunConfig& c, const std::string& v) { c.hp.templates.alpha1.k = to_double(v); }},
      {"k2", [](RunConfig& c, const std::string& v) { c.hp.templates.alpha2.k = to_double(v); }},
      {"k3", [](RunConfig& c, const std::string& v) { c.hp.templates.alpha3.k = to_double(v); }},
      {"ku", [](RunConfig& c, const std::string& v) { c.hp.templates.sigma.k = to_double(v); }},
      {"gamma1",
       [](RunConfig& c, const std::string& v) { c.hp.templates.alpha1.gamma = to_double(v); }},
      {"gamma2",
       [](RunConfig& c, const std::string& v) { c.hp.templates.alpha2.gamma = to_double(v); }},
      {"gamma3",
       [](RunConfig& c, const std::string& v) { c.hp.templates.alpha3.gamma = to_double(v); }},
      {"gamma_u",
       [](RunConfig& c, const std::string& v) { c.hp.templates.sigma.gamma = to_double(v); }},
      {"c0", [](RunConfig& c, const std::string& v) { c.hp.c0 = to_double(v); }},
      {"c1", [](RunConfig& c, const std::string& v) { c.hp.c1 = to_double(v); }},
      {"c2", [](RunConfig& c, const std::string& v) { c.hp.c2 = to_double(v); }},
      {"cl", [](RunConfig& c, const std::string& v) { c.hp.cl = to_double(v); }},
      {"hidden", [](RunConfig& c, const std::string& v) { c.hp.hidden = to_int_list(v); }},
      {"activation",
       [](RunConfig& c, const std::string& v) {
         c.hp.activation = activation_from_string(text::trim(v));
       }},
      {"init_scale", [](RunConfig& c, const std::string& v) { c.hp.init_scale = to_double(v); }},
      {"n_ep", [](RunConfig& c, const std::string& v) { c.hp.n_ep = to_int(v); }},
      {"n_b", [](RunConfig& c, const std::string& v) { c.hp.n_b = to_int(v); }},
      {"batch_size", [](RunConfig& c, const std::string& v) { c.hp.batch_size = to_int(v); }},
      {"lr_net", [](RunConfig& c, const std::string& v) { c.hp.lr_net = to_double(v); }},
      {"lr_eta", [](RunConfig& c, const std::string& v) { c.hp.lr_eta = to_double(v); }},
      {"optimizer",
       [](RunConfig& c, const std::string& v) {
         const std::string t = text::trim(v);
         if (t == "adam") {
           c.hp.optimizer = OptimizerKind::Adam;
         } else if (t == "sgd") {
           c.hp.optimizer = OptimizerKind::Sgd;
         } else {
           throw std::invalid_argument("optimizer must be adam or sgd");
         }
       }},
      {"adam_beta1", [](RunConfig& c, const std::string& v) { c.hp.adam_beta1 = to_double(v); }},
      {"adam_beta2", [](RunConfig& c, const std::string& v) { c.hp.adam_beta2 = to_double(v); }},
      {"adam_epsilon",
       [](RunConfig& c, const std::string& v) { c.hp.adam_epsilon = to_double(v); }},
      {"check_every", [](RunConfig& c, const std::string& v) { c.hp.check_every = to_int(v); }},
      {"resample_batches",
       [](RunConfig& c, const std::string& v) { c.hp.resample_batches = to_bool(v); }},
      {"max_wall_seconds",
       [](RunConfig& c, const std::string& v) { c.hp.max_wall_seconds = to_double(v); }},
      {"scp_budget", [](RunConfig& c, const std::string& v) { c.hp.scp_budget = to_double(v); }},
      {"threads", [](RunConfig& c, const std::string& v) { c.hp.threads = to_int(v); }},

      {"lipschitz_mode",
       [](RunConfig& c, const std::string& v) {
         const std::string t = text::trim(v);
         if (t == "point") {
           c.lipschitz_mode = LipschitzMode::Point;
         } else if (t == "ci95") {
           c.lipschitz_mode = LipschitzMode::Ci95;
         } else {
           throw std::invalid_argument("lipschitz_mode must be point or ci95");
         }
       }},
      {"lipschitz_x", [](RunConfig& c, const std::string& v) { c.lipschitz_x = to_double(v); }},
      {"lipschitz_u", [](RunConfig& c, const std::string& v) { c.lipschitz_u = to_double(v); }},
      {"lip_batches", [](RunConfig& c, const std::string& v) { c.lip_batches = to_int(v); }},
      {"lip_batch_size", [](RunConfig& c, const std::string& v) { c.lip_batch_size = to_int(v); }},
      {"lip_delta", [](RunConfig& c, const std::string& v) { c.lip_delta = to_double(v); }},

      {"allow_coarsening",
       [](RunConfig& c, const std::string& v) { c.allow_coarsening = to_bool(v); }},
      {"refine", [](RunConfig& c, const std::string& v) { c.refine = to_int(v); }},
      {"grid_budget", [](RunConfig& c, const std::string& v) { c.grid_budget = to_double(v); }},

      {"horizon", [](RunConfig& c, const std::string& v) { c.horizon = to_int(v); }},
      {"sim_x0", [](RunConfig& c, const std::string& v) { c.sim_x0 = to_vector_list(v); }},
      {"sim_u", [](RunConfig& c, const std::string& v) { c.sim_u = to_vector_list(v); }},
      {"falsify_trials", [](RunConfig& c, const std::string& v) { c.falsify_trials = to_int(v); }},

      {"seed", [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); }},
      {"seed_train", [](RunConfig& c, const std::string& v) { c.seed_train = to_u64(v); }},
      {"seed_lipschitz", [](RunConfig& c, const std::string& v) { c.seed_lipschitz = to_u64(v); }},
      {"seed_falsify", [](RunConfig& c, const std::string& v) { c.seed_falsify = to_u64(v); }},
      {"out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = text::trim(v); }},
      {"deterministic", [](RunConfig& c, const std::string& v) { c.deterministic = to_bool(v); }},
  };
  return table;
}

}  // namespace

std::uint64_t RunConfig::train_seed() const {
  return seed_train.value_or(text::mix(seed ^ kTrainTag));
}

std::uint64_t RunConfig::lipschitz_seed() const {
  return seed_lipschitz.value_or(text::mix(seed ^ kLipschitzTag));
}

std::uint64_t RunConfig::falsify_seed() const {
  return seed_falsify.value_or(text::mix(seed ^ kFalsifyTag));
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = setters();
  auto it = table.find(key);
  if (it == table.end()) throw std::invalid_argument("unknown key '" + key + "'");
  try {
    it->second(cfg, value);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument("key '" + key + "': " + e.what());
  }
}

RunConfig parse_config(std::istream& in, const std::string& origin, RunConfig base) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = text::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = text::trim(t.substr(0, eq));
    const std::string value = text::trim(t.substr(eq + 1));
    try {
      apply_setting(base, key, value);
    } catch (const std::exception& e) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  return parse_config(in, path, std::move(base));
}

std::string to_text(const RunConfig& c) {
  std::ostringstream o;
  auto put = [&](const std::string& k, const std::string& v) { o << k << " = " << v << '\n'; };
  auto num = [](double v) { return text::fmt(v); };
  const Hyperparams& hp = c.hp;
  const Templates& t = hp.templates;

  put("system", c.system);
  if (c.tau) put("tau", num(*c.tau));
  put("a", num(c.a));
  put("Ra", num(c.Ra));
  put("La", num(c.La));
  put("J", num(c.J));
  put("B", num(c.B));
  put("kb", num(c.kb));
  put("gain", num(c.gain));
  if (c.state_lower) put("state_lower", vec_text(*c.state_lower));
  if (c.state_upper) put("state_upper", vec_text(*c.state_upper));
  if (c.input_lower) put("input_lower", vec_text(*c.input_lower));
  if (c.input_upper) put("input_upper", vec_text(*c.input_upper));
  if (!c.external_command.empty()) put("external_command", c.external_command);

  put("eps", num(hp.eps));
  if (c.eps_x) put("eps_x", num(*c.eps_x));
  if (c.eps_u) put("eps_u", num(*c.eps_u));
  put("LL", num(hp.lipschitz_bound));
  put("k1", num(t.alpha1.k));
  put("k2", num(t.alpha2.k));
  put("k3", num(t.alpha3.k));
  put("ku", num(t.sigma.k));
  put("gamma1", num(t.alpha1.gamma));
  put("gamma2", num(t.alpha2.gamma));
  put("gamma3", num(t.alpha3.gamma));
  put("gamma_u", num(t.sigma.gamma));
  put("c0", num(hp.c0));
  put("c1", num(hp.c1));
  put("c2", num(hp.c2));
  put("cl", num(hp.cl));
  std::string hidden;
  for (std::size_t i = 0; i < hp.hidden.size(); ++i) {
    hidden += (i ? " " : "") + std::to_string(hp.hidden[i]);
  }
  put("hidden", hidden);
  put("activation", to_string(hp.activation));
  put("init_scale", num(hp.init_scale));
  put("n_ep", std::to_string(hp.n_ep));
  put("n_b", std::to_string(hp.n_b));
  put("batch_size", std::to_string(hp.batch_size));
  put("lr_net", num(hp.lr_net));
  put("lr_eta", num(hp.lr_eta));
  put("optimizer", hp.optimizer == OptimizerKind::Adam ? "adam" : "sgd");
  put("adam_beta1", num(hp.adam_beta1));
  put("adam_beta2", num(hp.adam_beta2));
  put("adam_epsilon", num(hp.adam_epsilon));
  put("check_every", std::to_string(hp.check_every));
  put("resample_batches", hp.resample_batches ? "true" : "false");
  put("max_wall_seconds", num(hp.max_wall_seconds));
  put("scp_budget", num(hp.scp_budget));
  put("threads", std::to_string(hp.threads));

  put("lipschitz_mode", c.lipschitz_mode == LipschitzMode::Point ? "point" : "ci95");
  if (c.lipschitz_x) put("lipschitz_x", num(*c.lipschitz_x));
  if (c.lipschitz_u) put("lipschitz_u", num(*c.lipschitz_u));
  put("lip_batches", std::to_string(c.lip_batches));
  put("lip_batch_size", std::to_string(c.lip_batch_size));
  put("lip_delta", num(c.lip_delta));

  put("allow_coarsening", c.allow_coarsening ? "true" : "false");
  put("refine", std::to_string(c.refine));
  put("grid_budget", num(c.grid_budget));

  put("horizon", std::to_string(c.horizon));
  if (!c.sim_x0.empty()) put("sim_x0", list_text(c.sim_x0));
  if (!c.sim_u.empty()) put("sim_u", list_text(c.sim_u));
  put("falsify_trials", std::to_string(c.falsify_trials));

  put("seed", std::to_string(c.seed));
  if (c.seed_train) put("seed_train", std::to_string(*c.seed_train));
  if (c.seed_lipschitz) put("seed_lipschitz", std::to_string(*c.seed_lipschitz));
  if (c.seed_falsify) put("seed_falsify", std::to_string(*c.seed_falsify));
  put("out_dir", c.out_dir);
  put("deterministic", c.deterministic ? "true" : "false");
  return o.str();
}

namespace {

std::optional<Box> box_from(const std::optional<Vector>& lo, const std::optional<Vector>& hi,
                            const char* what) {
  if (!lo && !hi) return std::nullopt;
  if (!lo || !hi) {
    throw std::invalid_argument(std::string("config: both ") + what + "_lower and " + what +
                                "_upper are needed");
  }
  return Box(*lo, *hi);
}

}  // namespace

DiscreteSystem make_system(const RunConfig& c) {
  const auto X = box_from(c.state_lower, c.state_upper, "state");
  const auto U = box_from(c.input_lower, c.input_upper, "input");
  if (c.system == "scalar") {
    return make_scalar_decay(c.tau.value_or(0.01), c.a, X, U);
  }
  if (c.system == "dcmotor") {
    DcMotorParams p;
    p.tau = c.tau.value_or(0.001);
    p.Ra = c.Ra;
    p.La = c.La;
    p.J = c.J;
    p.B = c.B;
    p.kb = c.kb;
    p.state_box = X;
    p.input_box = U;
    return make_dc_motor(p);
  }
  if (c.system == "linear") {
    const double g = c.gain;
    return DiscreteSystem("linear", X.value_or(Box::interval(0.0, 0.5)),
                          U.value_or(Box::interval(0.0, 0.5)),
                          [g](const Vector& x, const Vector&) -> Vector { return g * x; });
  }
  if (c.system == "external") {
    if (c.external_command.empty() || !X || !U) {
      throw std::invalid_argument(
          "config: system = external needs external_command and explicit state/input boxes");
    }
    return make_external_system(c.external_command, *X, *U);
  }
  throw std::invalid_argument("config: unknown system '" + c.system +
                              "' (expected scalar, dcmotor, linear or external)");
}

}  // namespace deltaiss
