#pragma once

#include <cstdint>

#include "contractgen/training.hpp"

namespace contractgen {

struct PpoConfig {
  int epochs = 120;
  int states_per_epoch = 512;
  double clip_epsilon = 0.2;
  double policy_lr = 2e-7;
  double value_lr = 2e-7;
  int update_epochs_per_batch = 4;
  int minibatch_size = 128;
  double init_log_std = -0.5;
  int eval_states = 100;
  int hidden = 256;
  std::uint64_t seed = 0;

  void validate() const;
};

// a = tanh(u), u ~ N(mean(s), diag(exp(log_std))^2). The log-std is a free
// parameter vector shared by all states.
class GaussianPolicyNet {
 public:
  GaussianPolicyNet() = default;
  GaussianPolicyNet(int state_dim, int action_dim, int hidden, double init_log_std, Rng& rng);
  GaussianPolicyNet(nn::Mlp mean_net, Vector log_std);

  Matrix mean(const Matrix& states) const;         // before the squash
  Matrix mean_action(const Matrix& states) const;  // tanh(mean)

  const nn::Mlp& mean_net() const { return mean_net_; }
  nn::Mlp& mean_net() { return mean_net_; }
  const Vector& log_std() const { return log_std_; }
  Vector& log_std() { return log_std_; }
  int action_dim() const { return static_cast<int>(log_std_.size()); }

  // Mean-network parameters followed by the log-std vector.
  Eigen::Index parameter_count() const;
  Vector flat_parameters() const;
  void set_flat_parameters(const Vector& flat);

 private:
  nn::Mlp mean_net_;
  Vector log_std_;
};

// log density of tanh(u) at the pre-squash point u, including the
// change-of-variables term -sum log(1 - tanh(u)^2).
double squashed_log_prob(const Vector& pre_squash, const Vector& mean, const Vector& log_std);

struct PpoBatch {
  Matrix states;      // encoded, one column per sample
  Matrix actions;     // squashed, in (-1, 1)
  Matrix pre_squash;
  Vector log_prob;    // under the collecting policy
  Vector reward;
};

// Samples one action per state column; rewards are left empty.
PpoBatch ppo_sample(const GaussianPolicyNet& policy, const Matrix& states, Rng& rng);

// Draws `count` training states and scores the sampled actions with the
// environment's training reward. Episodes are single-step, so return = reward.
PpoBatch ppo_collect(const Environment& env, StateSampler& sampler,
                     const GaussianPolicyNet& policy, int count, Rng& rng);

// Clipped surrogate mean(min(rho A, clip(rho, 1 +- eps) A)). If `grad` is
// given it receives the gradient w.r.t. the flat policy parameters.
double ppo_surrogate(const PpoBatch& batch, const Vector& advantages,
                     const GaussianPolicyNet& policy, double clip_epsilon, Vector* grad);

double value_loss(const Matrix& states, const Vector& targets, const nn::Mlp& value,
                  nn::MlpGrads* grads);

struct PpoOptimizers {
  nn::Adam policy;
  nn::Adam value;
};

struct PpoLosses {
  double policy_loss = 0.0;  // -surrogate, averaged over minibatches
  double value_loss = 0.0;
};

// Advantage = reward - V(s) with V taken before the update; then
// update_epochs_per_batch shuffled passes of minibatch steps.
PpoLosses ppo_update(const PpoBatch& batch, GaussianPolicyNet& policy, nn::Mlp& value,
                     PpoOptimizers& optimizers, const PpoConfig& cfg, Rng& rng);

nn::Mlp make_value_net(int state_dim, int hidden, Rng& rng);

struct PpoResult {
  GaussianPolicyNet policy;
  nn::Mlp value;
  TrainingTrace trace;
};

PpoResult ppo_train(const Environment& env, const PpoConfig& cfg,
                    const EpochCallback& on_epoch = {});

}  // namespace contractgen
