#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "contractgen/contract.hpp"
#include "contractgen/env.hpp"
#include "contractgen/nn.hpp"

namespace contractgen {

using nn::Matrix;
using nn::Vector;

// Everything a learner needs to interact with the market: how to sample
// training states, how to score actions, and the fixed held-out states.
struct Environment {
  SamplerConfig sampler;
  EconParams econ;
  RewardConfig train_reward;
  std::vector<MarketState> eval_states;

  static Environment make(SamplerConfig sampler, EconParams econ, RewardConfig train_reward,
                          int eval_count);

  int state_dim() const { return 2 * sampler.n; }
  int action_dim() const { return 2 * sampler.n; }
  Matrix encode(const std::vector<MarketState>& states) const;
  // Training reward for column `col` of `actions`.
  double train_reward_of(const MarketState& state, const Matrix& actions, Eigen::Index col) const;
};

struct EpochRecord {
  int epoch = 0;
  double test_reward = 0.0;     // mean projected utility on the held-out states
  double test_penalized = 0.0;  // mean penalized reward on the same actions
  double critic_loss = 0.0;
  double actor_obj = 0.0;
  double wall_ms = 0.0;
};

struct TrainingTrace {
  std::vector<EpochRecord> records;
};

// Header: epoch,test_reward,critic_loss,actor_obj,wall_ms. Wall-clock values
// are written as 0 unless `with_wall_clock`, so that reruns are byte-identical.
void write_trace_csv(std::ostream& out, const TrainingTrace& trace, bool with_wall_clock);
TrainingTrace read_trace_csv(std::istream& in);

// Called after every epoch; used for progress logging.
using EpochCallback = std::function<void(const EpochRecord&)>;

struct PolicyScore {
  std::vector<Contract> contracts;   // projected, feasible
  std::vector<double> utilities;     // expected server utility of each projected contract
  std::vector<double> penalized;     // penalized reward of the raw action
  double mean_utility = 0.0;
  double std_utility = 0.0;
  double mean_penalized = 0.0;
  double feasible_rate = 0.0;
};

// Scores raw actions (one column per state) after projection onto feasibility.
PolicyScore score_actions(const Environment& env, const std::vector<MarketState>& states,
                          const Matrix& actions);

// Fixed-capacity ring buffer of single-step transitions.
class ReplayBuffer {
 public:
  ReplayBuffer(int capacity, int state_dim, int action_dim);

  void push(const Eigen::Ref<const Vector>& state, const Eigen::Ref<const Vector>& action,
            double reward);
  std::vector<int> sample(int count, Rng& rng) const;

  Matrix states(const std::vector<int>& idx) const;
  Matrix actions(const std::vector<int>& idx) const;
  Matrix rewards(const std::vector<int>& idx) const;  // 1 x count

  int size() const { return size_; }
  int capacity() const { return capacity_; }

 private:
  int capacity_, size_ = 0, head_ = 0;
  Matrix states_, actions_;
  Vector rewards_;
};

// Running mean/std of every reward seen; learners regress normalized rewards.
class RewardNormalizer {
 public:
  void observe(double r);
  double normalize(double r) const;
  Matrix normalize(const Matrix& r) const;
  double mean() const { return mean_; }
  double stddev() const;

 private:
  std::int64_t count_ = 0;
  double mean_ = 0.0, m2_ = 0.0;
};

// Linear interpolation from `start` at epoch 0 to `end` at the last epoch.
double linear_decay(double start, double end, int epoch, int epochs);

}  // namespace contractgen
