#include "contractgen/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include <CLI11.hpp>

namespace contractgen {

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  size_t start = 0;
  while (true) {
    const size_t pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || s.empty()) {
    throw UsageError("expected a number, got '" + std::string(s) + "'");
  }
  return v;
}

template <typename Int>
Int parse_integer(std::string_view s) {
  Int v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || s.empty()) {
    throw UsageError("expected an integer, got '" + std::string(s) + "'");
  }
  return v;
}

bool parse_bool(std::string_view s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw UsageError("expected true or false, got '" + std::string(s) + "'");
}

std::vector<double> parse_doubles(std::string_view s) {
  std::vector<double> out;
  for (auto part : split(s, ',')) out.push_back(parse_double(part));
  return out;
}

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

RewardMode parse_mode(std::string_view s) {
  if (s == "penalize") return RewardMode::penalize;
  if (s == "project") return RewardMode::project;
  throw UsageError("reward.mode must be penalize or project");
}

const char* mode_name(RewardMode m) { return m == RewardMode::penalize ? "penalize" : "project"; }

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define CG_DOUBLE(name, member)                                                     \
  Field {                                                                           \
    name, [](ExperimentConfig& c, std::string_view v) { c.member = parse_double(v); }, \
        [](const ExperimentConfig& c) { return fmt(c.member); }                     \
  }
#define CG_INT(name, member)                                                            \
  Field {                                                                               \
    name, [](ExperimentConfig& c, std::string_view v) { c.member = parse_integer<int>(v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }              \
  }
#define CG_U64(name, member)                                                     \
  Field {                                                                        \
    name,                                                                        \
        [](ExperimentConfig& c, std::string_view v) {                            \
          c.member = parse_integer<std::uint64_t>(v);                            \
        },                                                                       \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }       \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"sampler.theta_ranges",
            [](ExperimentConfig& c, std::string_view v) {
              c.sampler.theta_ranges.clear();
              for (auto pair : split(v, ',')) {
                const auto ends = split(pair, ':');
                if (ends.size() != 2) throw UsageError("theta range must look like lo:hi");
                c.sampler.theta_ranges.emplace_back(parse_double(ends[0]), parse_double(ends[1]));
              }
            },
            [](const ExperimentConfig& c) {
              std::vector<std::string> parts;
              for (const auto& [lo, hi] : c.sampler.theta_ranges) {
                parts.push_back(fmt(lo) + ":" + fmt(hi));
              }
              return join(parts, ", ");
            }},
      Field{"sampler.dirichlet_alpha",
            [](ExperimentConfig& c, std::string_view v) {
              c.sampler.dirichlet_alpha = parse_doubles(v);
            },
            [](const ExperimentConfig& c) {
              std::vector<std::string> parts;
              for (double a : c.sampler.dirichlet_alpha) parts.push_back(fmt(a));
              return join(parts, ", ");
            }},
      CG_DOUBLE("sampler.l_max", sampler.l_max),
      CG_INT("sampler.m", sampler.m),
      CG_INT("sampler.n", sampler.n),
      CG_U64("sampler.seed", sampler.seed),
      CG_DOUBLE("econ.a1", econ.a1),
      CG_DOUBLE("econ.a2", econ.a2),
      CG_DOUBLE("econ.b1", econ.b1),
      CG_DOUBLE("econ.b2", econ.b2),
      CG_DOUBLE("econ.r_max", econ.r_max),
      CG_DOUBLE("econ.l_min", econ.l_min),
      CG_INT("gdm.epochs", gdm.epochs),
      CG_INT("gdm.states_per_epoch", gdm.states_per_epoch),
      CG_INT("gdm.batch_size", gdm.batch_size),
      CG_DOUBLE("gdm.actor_lr", gdm.actor_lr),
      CG_DOUBLE("gdm.critic_lr", gdm.critic_lr),
      CG_DOUBLE("gdm.discount", gdm.discount),
      CG_DOUBLE("gdm.exploration_sigma", gdm.exploration_sigma),
      CG_DOUBLE("gdm.exploration_sigma_final", gdm.exploration_sigma_final),
      CG_INT("gdm.replay_capacity", gdm.replay_capacity),
      CG_INT("gdm.eval_states", gdm.eval_states),
      CG_U64("gdm.seed", gdm.seed),
      CG_INT("gdm.t_steps", gdm.t_steps),
      CG_DOUBLE("gdm.beta_start", gdm.beta_start),
      CG_DOUBLE("gdm.beta_end", gdm.beta_end),
      CG_INT("gdm.hidden", gdm.hidden),
      CG_INT("gdm.embed_dim", gdm.embed_dim),
      CG_INT("gdm.critic_updates_per_epoch", gdm.critic_updates_per_epoch),
      CG_INT("gdm.actor_updates_per_epoch", gdm.actor_updates_per_epoch),
      Field{"gdm.critic_log_latency",
            [](ExperimentConfig& c, std::string_view v) {
              c.gdm.critic_log_latency = parse_bool(v);
            },
            [](const ExperimentConfig& c) {
              return std::string(c.gdm.critic_log_latency ? "true" : "false");
            }},
      CG_INT("ppo.epochs", ppo.epochs),
      CG_INT("ppo.states_per_epoch", ppo.states_per_epoch),
      CG_DOUBLE("ppo.clip_epsilon", ppo.clip_epsilon),
      CG_DOUBLE("ppo.policy_lr", ppo.policy_lr),
      CG_DOUBLE("ppo.value_lr", ppo.value_lr),
      CG_INT("ppo.update_epochs_per_batch", ppo.update_epochs_per_batch),
      CG_INT("ppo.minibatch_size", ppo.minibatch_size),
      CG_DOUBLE("ppo.init_log_std", ppo.init_log_std),
      CG_INT("ppo.eval_states", ppo.eval_states),
      CG_INT("ppo.hidden", ppo.hidden),
      CG_U64("ppo.seed", ppo.seed),
      CG_DOUBLE("reward.penalty_weight", reward.penalty_weight),
      Field{"reward.mode",
            [](ExperimentConfig& c, std::string_view v) { c.reward.mode = parse_mode(v); },
            [](const ExperimentConfig& c) { return std::string(mode_name(c.reward.mode)); }},
      Field{"output_dir",
            [](ExperimentConfig& c, std::string_view v) {
              if (v.empty()) throw UsageError("output_dir must not be empty");
              c.output_dir = std::string(v);
            },
            [](const ExperimentConfig& c) { return c.output_dir; }},
      Field{"seeds",
            [](ExperimentConfig& c, std::string_view v) {
              c.seeds.clear();
              for (auto part : split(v, ',')) c.seeds.push_back(parse_integer<std::uint64_t>(part));
            },
            [](const ExperimentConfig& c) {
              std::vector<std::string> parts;
              for (auto s : c.seeds) parts.push_back(std::to_string(s));
              return join(parts, ", ");
            }},
  };
  return table;
}

#undef CG_DOUBLE
#undef CG_INT
#undef CG_U64

constexpr std::string_view kFastProfile =
    "# Desk-scale learning rates and update counts.\n"
    "gdm.actor_lr = 1e-4\n"
    "gdm.critic_lr = 1e-4\n"
    "gdm.actor_updates_per_epoch = 2\n"
    "ppo.policy_lr = 1e-4\n"
    "ppo.value_lr = 1e-4\n";

constexpr std::string_view kReferenceProfile =
    "# Learning rate reported for the original experiments.\n"
    "gdm.actor_lr = 2e-7\n"
    "gdm.critic_lr = 2e-7\n"
    "ppo.policy_lr = 2e-7\n"
    "ppo.value_lr = 2e-7\n";

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

nlohmann::json eval_set_to_json(const EvalSetRecord& r) {
  return {{"sampler_seed", r.sampler_seed}, {"state_hashes", r.state_hashes}};
}

EvalSetRecord eval_set_from_json(const nlohmann::json& j) {
  EvalSetRecord r;
  r.sampler_seed = j.at("sampler_seed").get<std::uint64_t>();
  r.state_hashes = j.at("state_hashes").get<std::vector<std::string>>();
  return r;
}

Vector vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

void ExperimentConfig::validate() const {
  try {
    sampler.validate();
    econ.validate();
    gdm.validate();
    ppo.validate();
    reward.validate();
  } catch (const std::logic_error& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  if (seeds.empty()) throw UsageError("invalid config: seeds must not be empty");
  if (gdm.eval_states != ppo.eval_states) {
    throw UsageError("invalid config: gdm.eval_states and ppo.eval_states differ");
  }
  if (output_dir.empty()) throw UsageError("invalid config: output_dir is empty");
}

ExperimentConfig ExperimentConfig::for_seed(std::uint64_t seed) const {
  ExperimentConfig c = *this;
  c.gdm.seed = seed;
  c.ppo.seed = seed;
  c.seeds = {seed};
  return c;
}

Profile parse_profile(std::string_view name) {
  if (name == "fast") return Profile::fast;
  if (name == "reference") return Profile::reference;
  throw UsageError("profile must be fast or reference");
}

std::string_view profile_text(Profile profile) {
  return profile == Profile::fast ? kFastProfile : kReferenceProfile;
}

void apply_profile(ExperimentConfig& cfg, Profile profile) {
  std::istringstream in{std::string(profile_text(profile))};
  apply_config_text(cfg, in, profile == Profile::fast ? "profile fast" : "profile reference");
}

void apply_config_text(ExperimentConfig& cfg, std::istream& in, const std::string& source) {
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string_view view(line);
    view = trim(view.substr(0, view.find('#')));
    if (view.empty()) continue;
    const auto where = source + ":" + std::to_string(number) + ": ";
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) throw UsageError(where + "expected key = value");
    const auto key = trim(view.substr(0, eq));
    const auto value = trim(view.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(),
                                 [&](const Field& f) { return key == f.key; });
    if (it == table.end()) throw UsageError(where + "unknown config key '" + std::string(key) + "'");
    try {
      it->set(cfg, value);
    } catch (const UsageError& e) {
      throw UsageError(where + std::string(key) + ": " + e.what());
    }
  }
}

ExperimentConfig load_config(const std::string& path_or_default) {
  ExperimentConfig cfg;
  if (path_or_default == "default") return cfg;
  std::ifstream f(path_or_default);
  if (!f) throw UsageError("cannot open config file " + path_or_default);
  apply_config_text(cfg, f, path_or_default);
  return cfg;
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string state_hash(const MarketState& state) {
  std::string text = std::to_string(state.m) + ";" + std::to_string(state.n) + ";" + fmt(state.l_max);
  for (double q : state.q) text += ";" + fmt(q);
  for (double t : state.theta) text += ";" + fmt(t);
  return hex64(fnv1a(text));
}

Environment make_environment(const ExperimentConfig& cfg) {
  return Environment::make(cfg.sampler, cfg.econ, cfg.reward, cfg.gdm.eval_states);
}

nlohmann::json state_to_json(const MarketState& state) {
  return {{"m", state.m},         {"n", state.n},         {"l_max", state.l_max},
          {"q", state.q},         {"theta", state.theta}, {"hash", state_hash(state)}};
}

nlohmann::json contract_to_json(const Contract& contract) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& item : contract.items) {
    items.push_back({{"inv_latency", item.inv_latency},
                     {"latency", item.latency()},
                     {"reward", item.reward}});
  }
  return {{"items", items}};
}

nlohmann::json mlp_to_json(const nn::Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : net.layers()) {
    std::vector<double> weight;
    weight.reserve(static_cast<size_t>(layer.weight.size()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) weight.push_back(layer.weight(r, c));
    }
    layers.push_back({{"rows", layer.weight.rows()},
                      {"cols", layer.weight.cols()},
                      {"weight", weight},
                      {"bias", to_std(layer.bias)}});
  }
  return {{"activation", net.activation() == nn::Activation::silu ? "silu" : "identity"},
          {"layers", layers}};
}

nn::Mlp mlp_from_json(const nlohmann::json& j) {
  const std::string act = j.at("activation").get<std::string>();
  if (act != "silu" && act != "identity") throw UsageError("unknown activation " + act);
  std::vector<nn::DenseLayer> layers;
  for (const auto& l : j.at("layers")) {
    const auto rows = l.at("rows").get<Eigen::Index>();
    const auto cols = l.at("cols").get<Eigen::Index>();
    const auto weight = l.at("weight").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(weight.size()) != rows * cols) {
      throw UsageError("layer weight has the wrong length");
    }
    nn::DenseLayer layer;
    layer.weight.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) layer.weight(r, c) = weight[r * cols + c];
    }
    layer.bias = vector_from_json(l.at("bias"));
    layers.push_back(std::move(layer));
  }
  if (layers.empty()) throw UsageError("network has no layers");
  return nn::Mlp(std::move(layers), act == "silu" ? nn::Activation::silu : nn::Activation::identity);
}

EvalSetRecord eval_set_record(const Environment& env) {
  EvalSetRecord r;
  r.sampler_seed = env.sampler.seed;
  for (const auto& s : env.eval_states) r.state_hashes.push_back(state_hash(s));
  return r;
}

nlohmann::json checkpoint_to_json(const GdmCheckpoint& ckpt) {
  const auto& s = ckpt.schedule;
  nlohmann::json warp = {{"log_slot", ckpt.critic.warp().log_slot},
                         {"lo", ckpt.critic.warp().lo},
                         {"hi", ckpt.critic.warp().hi}};
  return {{"kind", "gdm"},
          {"seed", ckpt.seed},
          {"config_hash", ckpt.config_hash},
          {"schedule", {{"t_steps", s.t_steps}, {"beta", s.beta}, {"alpha_bar", s.alpha_bar}}},
          {"denoiser",
           {{"action_dim", ckpt.denoiser.action_dim()},
            {"state_dim", ckpt.denoiser.state_dim()},
            {"embed_dim", ckpt.denoiser.embed_dim()},
            {"net", mlp_to_json(ckpt.denoiser.net())}}},
          {"critic",
           {{"action_dim", ckpt.critic.action_dim()},
            {"state_dim", ckpt.critic.state_dim()},
            {"warp", warp},
            {"net", mlp_to_json(ckpt.critic.net())}}},
          {"eval_set", eval_set_to_json(ckpt.eval_set)}};
}

nlohmann::json checkpoint_to_json(const PpoCheckpoint& ckpt) {
  return {{"kind", "ppo"},
          {"seed", ckpt.seed},
          {"config_hash", ckpt.config_hash},
          {"policy",
           {{"mean_net", mlp_to_json(ckpt.policy.mean_net())},
            {"log_std", to_std(ckpt.policy.log_std())}}},
          {"value", mlp_to_json(ckpt.value)},
          {"eval_set", eval_set_to_json(ckpt.eval_set)}};
}

GdmCheckpoint gdm_checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("kind") != "gdm") throw UsageError("not a gdm checkpoint");
    GdmCheckpoint c;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.config_hash = j.at("config_hash").get<std::string>();
    c.schedule = NoiseSchedule::from_betas(j.at("schedule").at("beta").get<std::vector<double>>());
    const auto& d = j.at("denoiser");
    c.denoiser = DenoiserNet(mlp_from_json(d.at("net")), d.at("action_dim").get<int>(),
                             d.at("state_dim").get<int>(), d.at("embed_dim").get<int>());
    const auto& q = j.at("critic");
    ActionWarp warp;
    warp.log_slot = q.at("warp").at("log_slot").get<std::vector<bool>>();
    warp.lo = q.at("warp").at("lo").get<double>();
    warp.hi = q.at("warp").at("hi").get<double>();
    c.critic = CriticNet(mlp_from_json(q.at("net")), q.at("action_dim").get<int>(),
                         q.at("state_dim").get<int>(), warp);
    c.eval_set = eval_set_from_json(j.at("eval_set"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed gdm checkpoint: ") + e.what());
  }
}

PpoCheckpoint ppo_checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("kind") != "ppo") throw UsageError("not a ppo checkpoint");
    PpoCheckpoint c;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.config_hash = j.at("config_hash").get<std::string>();
    c.policy = GaussianPolicyNet(mlp_from_json(j.at("policy").at("mean_net")),
                                 vector_from_json(j.at("policy").at("log_std")));
    c.value = mlp_from_json(j.at("value"));
    c.eval_set = eval_set_from_json(j.at("eval_set"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed ppo checkpoint: ") + e.what());
  }
}

void require_same_eval_set(const EvalSetRecord& expected, const EvalSetRecord& found,
                           const std::string& what) {
  std::ostringstream diff;
  if (expected.sampler_seed != found.sampler_seed) {
    diff << "  sampler seed: expected " << expected.sampler_seed << ", found "
         << found.sampler_seed << "\n";
  }
  if (expected.state_hashes.size() != found.state_hashes.size()) {
    diff << "  state count: expected " << expected.state_hashes.size() << ", found "
         << found.state_hashes.size() << "\n";
  }
  const size_t common = std::min(expected.state_hashes.size(), found.state_hashes.size());
  for (size_t i = 0; i < common; ++i) {
    if (expected.state_hashes[i] != found.state_hashes[i]) {
      diff << "  state " << i << ": expected " << expected.state_hashes[i] << ", found "
           << found.state_hashes[i] << "\n";
    }
  }
  if (!diff.str().empty()) {
    throw UsageError("evaluation set mismatch in " + what + ":\n" + diff.str());
  }
}

MethodSummary oracle_summary(const Environment& env) {
  MethodSummary m;
  const double n = static_cast<double>(env.eval_states.size());
  int feasible = 0;
  for (size_t i = 0; i < env.eval_states.size(); ++i) {
    const auto& s = env.eval_states[i];
    const OracleSolution sol = closed_form_contract(s, env.econ);
    feasible += evaluate(s, sol.contract, env.econ).feasible ? 1 : 0;
    m.utilities.push_back(sol.expected_server);
    m.contracts.push_back(sol.contract);
    if (i == 0) m.example = sol.contract;
  }
  for (double u : m.utilities) m.mean_utility += u / n;
  double var = 0.0;
  for (double u : m.utilities) var += (u - m.mean_utility) * (u - m.mean_utility) / n;
  m.std_utility = std::sqrt(var);
  m.feasible_rate = feasible / n;
  return m;
}

MethodSummary policy_summary(const Environment& env, const Matrix& raw_actions) {
  const PolicyScore score = score_actions(env, env.eval_states, raw_actions);
  MethodSummary m;
  m.mean_utility = score.mean_utility;
  m.std_utility = score.std_utility;
  m.feasible_rate = score.feasible_rate;
  m.utilities = score.utilities;
  m.contracts = score.contracts;
  if (!score.contracts.empty()) m.example = score.contracts.front();
  return m;
}

ComparisonReport build_comparison(const Environment& env, const GdmCheckpoint& gdm,
                                  const PpoCheckpoint& ppo) {
  const EvalSetRecord current = eval_set_record(env);
  require_same_eval_set(current, gdm.eval_set, "gdm checkpoint");
  require_same_eval_set(current, ppo.eval_set, "ppo checkpoint");
  ComparisonReport r;
  r.oracle = oracle_summary(env);
  r.gdm = policy_summary(
      env, gdm_eval_actions(env, env.eval_states, gdm.denoiser, gdm.schedule, gdm.seed));
  r.ppo = policy_summary(env, ppo.policy.mean_action(env.encode(env.eval_states)));
  r.gdm_to_ppo_ratio = r.gdm.mean_utility / r.ppo.mean_utility;
  r.reference_state_hash = current.state_hashes.empty() ? "" : current.state_hashes.front();
  return r;
}

nlohmann::json comparison_to_json(const ComparisonReport& report) {
  const auto method = [](const MethodSummary& m) {
    return nlohmann::json{{"mean_utility", m.mean_utility},
                          {"std_utility", m.std_utility},
                          {"feasible_rate", m.feasible_rate},
                          {"example_contract", contract_to_json(m.example)}};
  };
  return {{"oracle", method(report.oracle)},
          {"gdm", method(report.gdm)},
          {"ppo", method(report.ppo)},
          {"gdm_to_ppo_ratio", report.gdm_to_ppo_ratio},
          {"reference_state_hash", report.reference_state_hash}};
}

void write_curves_csv(std::ostream& out, const TrainingTrace& gdm, const TrainingTrace& ppo,
                      double oracle_mean) {
  if (gdm.records.size() != ppo.records.size()) {
    throw UsageError("gdm and ppo traces have different lengths");
  }
  out << "epoch,gdm_reward,ppo_reward,oracle_reward\n";
  for (size_t i = 0; i < gdm.records.size(); ++i) {
    out << gdm.records[i].epoch << ',' << fmt(gdm.records[i].test_reward) << ','
        << fmt(ppo.records[i].test_reward) << ',' << fmt(oracle_mean) << '\n';
  }
}

void write_curves_svg(std::ostream& out, const TrainingTrace& gdm, const TrainingTrace& ppo,
                      double oracle_mean, const std::string& title) {
  const double width = 640, height = 400, left = 70, right = 20, top = 40, bottom = 50;
  double lo = oracle_mean, hi = oracle_mean;
  for (const auto* trace : {&gdm, &ppo}) {
    for (const auto& r : trace->records) {
      lo = std::min(lo, r.test_reward);
      hi = std::max(hi, r.test_reward);
    }
  }
  const double pad = std::max(1.0, 0.05 * (hi - lo));
  lo -= pad;
  hi += pad;
  const size_t count = std::max<size_t>(2, std::max(gdm.records.size(), ppo.records.size()));
  const auto x_of = [&](double i) {
    return left + (width - left - right) * i / static_cast<double>(count - 1);
  };
  const auto y_of = [&](double v) { return top + (height - top - bottom) * (hi - v) / (hi - lo); };
  const auto polyline = [&](const TrainingTrace& t, const char* color) {
    std::string pts;
    for (size_t i = 0; i < t.records.size(); ++i) {
      pts += fixed(x_of(static_cast<double>(i)), 2) + "," + fixed(y_of(t.records[i].test_reward), 2) + " ";
    }
    return "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
  };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << title << "</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << height - bottom << "\" x2=\"" << width - right
      << "\" y2=\"" << height - bottom << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << height - bottom << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    out << "<text x=\"" << left - 6 << "\" y=\"" << fixed(y_of(v) + 4, 2)
        << "\" text-anchor=\"end\">" << fixed(v, 1) << "</text>\n";
  }
  out << "<text x=\"" << left << "\" y=\"" << height - bottom + 18 << "\">0</text>\n";
  out << "<text x=\"" << width - right << "\" y=\"" << height - bottom + 18
      << "\" text-anchor=\"end\">" << count - 1 << "</text>\n";
  out << "<text x=\"" << (left + width - right) / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\">epoch</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << fixed(y_of(oracle_mean), 2) << "\" x2=\""
      << width - right << "\" y2=\"" << fixed(y_of(oracle_mean), 2)
      << "\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n";
  out << polyline(ppo, "#d95f02") << polyline(gdm, "#1b9e77");
  const double lx = width - right - 130;
  const std::pair<const char*, const char*> legend[] = {
      {"GDM", "#1b9e77"}, {"PPO", "#d95f02"}, {"oracle", "gray"}};
  for (int k = 0; k < 3; ++k) {
    const double ly = top + 16 + 16 * k;
    out << "<line x1=\"" << lx << "\" y1=\"" << ly - 4 << "\" x2=\"" << lx + 24 << "\" y2=\""
        << ly - 4 << "\" stroke=\"" << legend[k].second << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << lx + 30 << "\" y=\"" << ly << "\">" << legend[k].first << "</text>\n";
  }
  out << "</svg>\n";
}

void write_report_markdown(std::ostream& out, const std::vector<SeedReport>& seeds,
                           const ExperimentConfig& cfg) {
  out << "# GDM and PPO contract design\n\n";
  out << "Held-out states: " << cfg.gdm.eval_states << " (sampler seed " << cfg.sampler.seed
      << "). Utilities are mean expected server utility after projection onto IR/IC.\n\n";
  out << "Learning rates: GDM actor " << fmt(cfg.gdm.actor_lr) << ", critic "
      << fmt(cfg.gdm.critic_lr) << "; PPO policy " << fmt(cfg.ppo.policy_lr) << ", value "
      << fmt(cfg.ppo.value_lr) << ". Epochs: GDM " << cfg.gdm.epochs << ", PPO " << cfg.ppo.epochs
      << ".\n\n";

  out << "## Final test reward\n\n";
  out << "| seed | oracle | GDM | PPO | GDM/PPO | GDM/oracle | PPO/oracle | GDM >= PPO every epoch "
         "| feasible (oracle, GDM, PPO) |\n";
  out << "|---|---|---|---|---|---|---|---|---|\n";
  int wins = 0;
  for (const auto& s : seeds) {
    const auto& c = s.comparison;
    bool dominates = s.gdm_trace.records.size() == s.ppo_trace.records.size();
    for (size_t i = 0; dominates && i < s.gdm_trace.records.size(); ++i) {
      dominates = s.gdm_trace.records[i].test_reward >= s.ppo_trace.records[i].test_reward;
    }
    wins += c.gdm.mean_utility >= c.ppo.mean_utility ? 1 : 0;
    out << "| " << s.seed << " | " << fixed(c.oracle.mean_utility, 4) << " | "
        << fixed(c.gdm.mean_utility, 4) << " | " << fixed(c.ppo.mean_utility, 4) << " | "
        << fixed(c.gdm_to_ppo_ratio, 4) << " | "
        << fixed(c.gdm.mean_utility / c.oracle.mean_utility, 4) << " | "
        << fixed(c.ppo.mean_utility / c.oracle.mean_utility, 4) << " | "
        << (dominates ? "yes" : "no") << " | " << fixed(c.oracle.feasible_rate, 2) << ", "
        << fixed(c.gdm.feasible_rate, 2) << ", " << fixed(c.ppo.feasible_rate, 2) << " |\n";
  }
  out << "\nGDM final utility is at least PPO's on " << wins << " of " << seeds.size()
      << " seeds.\n";

  for (const auto& s : seeds) {
    const auto& c = s.comparison;
    out << "\n## Seed " << s.seed << "\n\n";
    out << "Contracts on the reference state " << c.reference_state_hash
        << ", items as (inverse latency, reward):\n\n";
    out << "| method | items | utility |\n|---|---|---|\n";
    const auto row = [&](const char* name, const MethodSummary& m) {
      std::vector<std::string> items;
      for (const auto& it : m.example.items) {
        items.push_back("(" + fixed(it.inv_latency, 6) + ", " + fixed(it.reward, 4) + ")");
      }
      out << "| " << name << " | " << join(items, " ") << " | "
          << (m.utilities.empty() ? std::string("") : fixed(m.utilities.front(), 4)) << " |\n";
    };
    row("oracle", c.oracle);
    row("GDM", c.gdm);
    row("PPO", c.ppo);

    out << "\n| epoch | GDM | PPO | oracle | GDM/PPO |\n|---|---|---|---|---|\n";
    const size_t n = std::min(s.gdm_trace.records.size(), s.ppo_trace.records.size());
    for (size_t i = 0; i < n; ++i) {
      if (i % 10 != 0 && i + 1 != n) continue;
      const double g = s.gdm_trace.records[i].test_reward;
      const double p = s.ppo_trace.records[i].test_reward;
      out << "| " << s.gdm_trace.records[i].epoch << " | " << fixed(g, 4) << " | " << fixed(p, 4)
          << " | " << fixed(c.oracle.mean_utility, 4) << " | " << fixed(g / p, 4) << " |\n";
    }
  }
}

// ---------------------------------------------------------------------------
// Command line

namespace {

struct CommonOptions {
  std::string config = "default";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> profile;
};

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.profile) apply_profile(cfg, parse_profile(*o.profile));
  if (o.out) cfg.output_dir = *o.out;
  if (o.seed) cfg.seeds = {*o.seed};
  cfg.validate();
  return cfg;
}

// Config text without the output location, which does not affect results.
std::string experiment_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    if (std::string_view(f.key) != "output_dir") out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) { return hex64(fnv1a(experiment_text(cfg))); }

nlohmann::json versions() {
  return {{"contractgen", "0.1.0"},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                        std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}};
}

// Writes every file, then a manifest listing them with their hashes.
class RunWriter {
 public:
  RunWriter(std::filesystem::path dir, std::string command, const ExperimentConfig& cfg)
      : dir_(std::move(dir)), command_(std::move(command)), cfg_(cfg) {}

  void add(const std::string& name, const std::string& content) {
    write_text(dir_ / name, content);
    files_.push_back({{"file", name}, {"fnv1a", hex64(fnv1a(content))}});
  }

  void finish() {
    std::vector<std::string> lines;
    std::istringstream in(experiment_text(cfg_));
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    const nlohmann::json manifest = {{"command", command_},
                                     {"config_hash", config_hash(cfg_)},
                                     {"seeds", cfg_.seeds},
                                     {"versions", versions()},
                                     {"config", lines},
                                     {"outputs", files_}};
    write_text(dir_ / ("manifest_" + command_ + ".json"), manifest.dump(2) + "\n");
  }

 private:
  std::filesystem::path dir_;
  std::string command_;
  ExperimentConfig cfg_;
  nlohmann::json files_ = nlohmann::json::array();
};

std::filesystem::path seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  return std::filesystem::path(cfg.output_dir) / ("seed-" + std::to_string(seed));
}

nlohmann::json read_json(const std::filesystem::path& path, const char* missing) {
  if (!std::filesystem::exists(path)) {
    throw UsageError(std::string(missing) + ": " + path.string());
  }
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("cannot parse " + path.string() + ": " + e.what());
  }
}

TrainingTrace read_trace(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw UsageError("missing trace: " + path.string());
  std::istringstream in(read_text(path));
  return read_trace_csv(in);
}

std::string trace_text(const TrainingTrace& trace, bool wall_clock) {
  std::ostringstream out;
  write_trace_csv(out, trace, wall_clock);
  return out.str();
}

EpochCallback progress(std::ostream& out, const char* name, std::uint64_t seed, int epochs) {
  return [&out, name, seed, epochs](const EpochRecord& r) {
    if (r.epoch % 10 == 9 || r.epoch + 1 == epochs) {
      out << name << " seed " << seed << " epoch " << r.epoch + 1 << "/" << epochs
          << " test_reward " << fixed(r.test_reward, 4) << std::endl;
    }
  };
}

void cmd_sample_states(const ExperimentConfig& cfg, std::ostream& out) {
  const Environment env = make_environment(cfg);
  nlohmann::json states = nlohmann::json::array();
  for (size_t i = 0; i < env.eval_states.size(); ++i) {
    nlohmann::json s = state_to_json(env.eval_states[i]);
    s["index"] = i;
    states.push_back(s);
  }
  const nlohmann::json doc = {{"sampler_seed", cfg.sampler.seed}, {"states", states}};
  RunWriter w(cfg.output_dir, "sample-states", cfg);
  w.add("states.json", doc.dump(2) + "\n");
  w.finish();
  out << "wrote " << env.eval_states.size() << " states to "
      << (std::filesystem::path(cfg.output_dir) / "states.json").string() << "\n";
}

void cmd_solve_oracle(const ExperimentConfig& cfg, const std::string& method, std::ostream& out) {
  const Environment env = make_environment(cfg);
  nlohmann::json rows = nlohmann::json::array();
  double mean = 0.0;
  std::vector<double> utilities;
  int feasible = 0;
  for (size_t i = 0; i < env.eval_states.size(); ++i) {
    const MarketState& s = env.eval_states[i];
    OracleSolution sol;
    if (method == "closed_form") {
      sol = closed_form_contract(s, env.econ);
    } else if (method == "grid") {
      sol = grid_search_contract(s, env.econ, GridSpec{});
    } else {
      Contract init;
      for (int k = 0; k < s.n; ++k) {
        init.items.push_back({2.0 / s.l_max, 0.5 * env.econ.r_max});
      }
      sol = projected_ascent(s, env.econ, init, 10000, 1.0);
    }
    const bool ok = evaluate(s, sol.contract, env.econ).feasible;
    feasible += ok ? 1 : 0;
    utilities.push_back(sol.expected_server);
    rows.push_back({{"index", i},
                    {"state_hash", state_hash(s)},
                    {"contract", contract_to_json(sol.contract)},
                    {"expected_server", sol.expected_server},
                    {"clamped", sol.clamped},
                    {"feasible", ok}});
  }
  const double n = static_cast<double>(utilities.size());
  for (double u : utilities) mean += u / n;
  double var = 0.0;
  for (double u : utilities) var += (u - mean) * (u - mean) / n;
  const nlohmann::json doc = {{"method", method},
                              {"mean_utility", mean},
                              {"std_utility", std::sqrt(var)},
                              {"feasible_rate", feasible / n},
                              {"states", rows}};
  RunWriter w(cfg.output_dir, "solve-oracle", cfg);
  w.add("oracle.json", doc.dump(2) + "\n");
  w.finish();
  out << "oracle (" << method << ") mean utility " << fixed(mean, 6) << " over "
      << utilities.size() << " states\n";
}

void cmd_train_gdm(const ExperimentConfig& cfg, bool wall_clock, std::ostream& out) {
  const Environment env = make_environment(cfg);
  for (std::uint64_t seed : cfg.seeds) {
    const ExperimentConfig run = cfg.for_seed(seed);
    const GdmResult result =
        train_gdm(env, run.gdm, progress(out, "gdm", seed, run.gdm.epochs));
    GdmCheckpoint ckpt{seed, config_hash(run), result.schedule, result.denoiser, result.critic,
                       eval_set_record(env)};
    RunWriter w(seed_dir(cfg, seed), "train-gdm", run);
    w.add("gdm_trace.csv", trace_text(result.trace, wall_clock));
    w.add("gdm_checkpoint.json", checkpoint_to_json(ckpt).dump() + "\n");
    w.finish();
  }
}

void cmd_train_ppo(const ExperimentConfig& cfg, bool wall_clock, std::ostream& out) {
  const Environment env = make_environment(cfg);
  for (std::uint64_t seed : cfg.seeds) {
    const ExperimentConfig run = cfg.for_seed(seed);
    const PpoResult result = ppo_train(env, run.ppo, progress(out, "ppo", seed, run.ppo.epochs));
    PpoCheckpoint ckpt{seed, config_hash(run), result.policy, result.value, eval_set_record(env)};
    RunWriter w(seed_dir(cfg, seed), "train-ppo", run);
    w.add("ppo_trace.csv", trace_text(result.trace, wall_clock));
    w.add("ppo_checkpoint.json", checkpoint_to_json(ckpt).dump() + "\n");
    w.finish();
  }
}

ComparisonReport compare_seed(const ExperimentConfig& cfg, const Environment& env,
                              std::uint64_t seed) {
  const auto dir = seed_dir(cfg, seed);
  const GdmCheckpoint gdm =
      gdm_checkpoint_from_json(read_json(dir / "gdm_checkpoint.json", "missing checkpoint"));
  const PpoCheckpoint ppo =
      ppo_checkpoint_from_json(read_json(dir / "ppo_checkpoint.json", "missing checkpoint"));
  return build_comparison(env, gdm, ppo);
}

void cmd_compare(const ExperimentConfig& cfg, std::ostream& out) {
  const Environment env = make_environment(cfg);
  for (std::uint64_t seed : cfg.seeds) {
    const ComparisonReport report = compare_seed(cfg, env, seed);
    RunWriter w(seed_dir(cfg, seed), "compare", cfg.for_seed(seed));
    w.add("comparison.json", comparison_to_json(report).dump(2) + "\n");
    w.finish();
    out << "seed " << seed << ": oracle " << fixed(report.oracle.mean_utility, 4) << "  gdm "
        << fixed(report.gdm.mean_utility, 4) << "  ppo " << fixed(report.ppo.mean_utility, 4)
        << "  gdm/ppo " << fixed(report.gdm_to_ppo_ratio, 4) << "\n";
  }
}

void cmd_report(const ExperimentConfig& cfg, std::ostream& out) {
  const Environment env = make_environment(cfg);
  std::vector<SeedReport> reports;
  nlohmann::json contracts = nlohmann::json::array();
  for (std::uint64_t seed : cfg.seeds) {
    const auto dir = seed_dir(cfg, seed);
    SeedReport r;
    r.seed = seed;
    r.comparison = compare_seed(cfg, env, seed);
    r.gdm_trace = read_trace(dir / "gdm_trace.csv");
    r.ppo_trace = read_trace(dir / "ppo_trace.csv");

    std::ostringstream csv, svg;
    write_curves_csv(csv, r.gdm_trace, r.ppo_trace, r.comparison.oracle.mean_utility);
    write_curves_svg(svg, r.gdm_trace, r.ppo_trace, r.comparison.oracle.mean_utility,
                     "Test reward, seed " + std::to_string(seed));
    RunWriter w(dir, "report", cfg.for_seed(seed));
    w.add("curves.csv", csv.str());
    w.add("curves.svg", svg.str());
    w.finish();

    nlohmann::json entry = comparison_to_json(r.comparison);
    entry["seed"] = seed;
    contracts.push_back(entry);
    reports.push_back(std::move(r));
  }
  std::ostringstream md;
  write_report_markdown(md, reports, cfg);
  RunWriter w(cfg.output_dir, "report", cfg);
  w.add("contracts.json", contracts.dump(2) + "\n");
  w.add("report.md", md.str());
  w.finish();
  out << "wrote " << (std::filesystem::path(cfg.output_dir) / "report.md").string() << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contract design with diffusion and PPO policies", "contractgen"};
  app.require_subcommand(1);

  CommonOptions opts;
  bool wall_clock = false;
  std::string method = "closed_form";
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "config file, or 'default'");
    sub->add_option("--seed", opts.seed, "run a single seed");
    sub->add_option("--out", opts.out, "output directory");
    sub->add_option("--profile", opts.profile, "fast or reference")
        ->check(CLI::IsMember({"fast", "reference"}));
  };
  CLI::App* sample = app.add_subcommand("sample-states", "write the held-out states");
  CLI::App* oracle = app.add_subcommand("solve-oracle", "solve the held-out states exactly");
  CLI::App* gdm = app.add_subcommand("train-gdm", "train the diffusion policy");
  CLI::App* ppo = app.add_subcommand("train-ppo", "train the PPO baseline");
  CLI::App* compare = app.add_subcommand("compare", "score trained checkpoints");
  CLI::App* report = app.add_subcommand("report", "curves, contracts and summary");
  for (CLI::App* sub : {sample, oracle, gdm, ppo, compare, report}) add_common(sub);
  oracle->add_option("--method", method, "closed_form, grid or ascent")
      ->check(CLI::IsMember({"closed_form", "grid", "ascent"}));
  for (CLI::App* sub : {gdm, ppo}) {
    sub->add_flag("--wall-clock", wall_clock, "record wall-clock times in the trace");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    const ExperimentConfig cfg = resolve(opts);
    if (sample->parsed()) cmd_sample_states(cfg, out);
    if (oracle->parsed()) cmd_solve_oracle(cfg, method, out);
    if (gdm->parsed()) cmd_train_gdm(cfg, wall_clock, out);
    if (ppo->parsed()) cmd_train_ppo(cfg, wall_clock, out);
    if (compare->parsed()) cmd_compare(cfg, out);
    if (report->parsed()) cmd_report(cfg, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace contractgen
