#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "contractgen/gdm_trainer.hpp"
#include "contractgen/oracle.hpp"
#include "contractgen/ppo.hpp"

namespace contractgen {

// Bad flags, bad config files, missing inputs: exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  SamplerConfig sampler;
  EconParams econ;
  DiffusionPolicyConfig gdm;
  PpoConfig ppo;
  RewardConfig reward{1000.0, RewardMode::project};
  std::string output_dir = "out";
  std::vector<std::uint64_t> seeds{1, 2, 3};

  void validate() const;
  // Learner seeds set to `seed`; the sampler seed (and so the eval set) is kept.
  ExperimentConfig for_seed(std::uint64_t seed) const;
};

enum class Profile { fast, reference };

Profile parse_profile(std::string_view name);
// Overlay text for a profile, in config-file syntax.
std::string_view profile_text(Profile profile);
void apply_profile(ExperimentConfig& cfg, Profile profile);

// Flat `key = value` lines; '#' starts a comment. Keys are dotted field names
// (sampler.l_max, gdm.actor_lr, ...). Unknown keys and bad values throw
// UsageError with the line number.
void apply_config_text(ExperimentConfig& cfg, std::istream& in, const std::string& source);
// "default" yields the built-in defaults.
ExperimentConfig load_config(const std::string& path_or_default);
// Canonical text: every key, fixed order, round-trip precision.
std::string format_config(const ExperimentConfig& cfg);

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t value);
std::string state_hash(const MarketState& state);

// Training and evaluation environment; the eval set has gdm.eval_states states.
Environment make_environment(const ExperimentConfig& cfg);

nlohmann::json state_to_json(const MarketState& state);
nlohmann::json contract_to_json(const Contract& contract);
nlohmann::json mlp_to_json(const nn::Mlp& net);
nn::Mlp mlp_from_json(const nlohmann::json& j);

struct EvalSetRecord {
  std::uint64_t sampler_seed = 0;
  std::vector<std::string> state_hashes;
};
EvalSetRecord eval_set_record(const Environment& env);

struct GdmCheckpoint {
  std::uint64_t seed = 0;
  std::string config_hash;
  NoiseSchedule schedule;
  DenoiserNet denoiser;
  CriticNet critic;
  EvalSetRecord eval_set;
};

struct PpoCheckpoint {
  std::uint64_t seed = 0;
  std::string config_hash;
  GaussianPolicyNet policy;
  nn::Mlp value;
  EvalSetRecord eval_set;
};

nlohmann::json checkpoint_to_json(const GdmCheckpoint& ckpt);
nlohmann::json checkpoint_to_json(const PpoCheckpoint& ckpt);
GdmCheckpoint gdm_checkpoint_from_json(const nlohmann::json& j);
PpoCheckpoint ppo_checkpoint_from_json(const nlohmann::json& j);

// Throws UsageError listing every index whose state hash differs.
void require_same_eval_set(const EvalSetRecord& expected, const EvalSetRecord& found,
                           const std::string& what);

struct MethodSummary {
  double mean_utility = 0.0;
  double std_utility = 0.0;
  double feasible_rate = 0.0;
  Contract example;  // on the reference state (eval state 0)
  std::vector<Contract> contracts;
  std::vector<double> utilities;
};

struct ComparisonReport {
  MethodSummary oracle, gdm, ppo;
  double gdm_to_ppo_ratio = 0.0;
  std::string reference_state_hash;
};

MethodSummary oracle_summary(const Environment& env);
MethodSummary policy_summary(const Environment& env, const Matrix& raw_actions);
ComparisonReport build_comparison(const Environment& env, const GdmCheckpoint& gdm,
                                  const PpoCheckpoint& ppo);
nlohmann::json comparison_to_json(const ComparisonReport& report);

// epoch,gdm_reward,ppo_reward,oracle_reward. Traces must have equal length.
void write_curves_csv(std::ostream& out, const TrainingTrace& gdm, const TrainingTrace& ppo,
                      double oracle_mean);
void write_curves_svg(std::ostream& out, const TrainingTrace& gdm, const TrainingTrace& ppo,
                      double oracle_mean, const std::string& title);

struct SeedReport {
  std::uint64_t seed = 0;
  TrainingTrace gdm_trace, ppo_trace;
  ComparisonReport comparison;
};
void write_report_markdown(std::ostream& out, const std::vector<SeedReport>& seeds,
                           const ExperimentConfig& cfg);

// Entry point of the command-line tool. Returns the process exit code:
// 0 success, 1 runtime or numeric failure, 2 usage or config error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace contractgen
