#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "contractgen/contract.hpp"

namespace contractgen {

using Rng = std::mt19937_64;

// Deterministic generator for (seed, stream index) pairs.
Rng make_rng(std::uint64_t seed, std::uint64_t index);

struct SamplerConfig {
  std::vector<std::pair<double, double>> theta_ranges{{10.0, 100.0}, {100.0, 200.0}};
  std::vector<double> dirichlet_alpha{1.0, 1.0};
  double l_max = 150.0;
  int m = 1;
  int n = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

// State number `draw_index` of the stream bound to cfg.seed.
MarketState sample_state(const SamplerConfig& cfg, std::uint64_t draw_index);

// Sequential view over sample_state that logs every (seed, index) it hands out.
class StateSampler {
 public:
  explicit StateSampler(SamplerConfig cfg, std::uint64_t first_index = 0);

  MarketState next();
  std::vector<MarketState> next_batch(int count);

  const SamplerConfig& config() const { return cfg_; }
  std::uint64_t next_index() const { return next_index_; }
  const std::vector<std::pair<std::uint64_t, std::uint64_t>>& log() const { return log_; }

 private:
  SamplerConfig cfg_;
  std::uint64_t next_index_;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> log_;
};

// Held-out evaluation states: a stream independent of the training stream.
std::vector<MarketState> sample_eval_set(const SamplerConfig& cfg, int count);

// [theta_k / theta_hi_k ..., q_k ...], length 2n.
std::vector<double> encode_state(const MarketState& state, const SamplerConfig& cfg);

// Raw policy output in [-1, 1]^{2n}, slots ordered (inv_latency_1, reward_1, ...).
struct ActionVector {
  std::vector<double> raw;
};

ActionVector clamp_action(std::span<const double> raw);

Contract decode_action(std::span<const double> raw, const MarketState& state,
                       const EconParams& params);

enum class RewardMode { penalize, project };

struct RewardConfig {
  double penalty_weight = 1000.0;
  RewardMode mode = RewardMode::penalize;

  void validate() const;
};

double reward(const MarketState& state, std::span<const double> raw,
              const EconParams& params, const RewardConfig& rcfg);

}  // namespace contractgen
