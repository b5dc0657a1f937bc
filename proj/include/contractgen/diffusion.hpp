#pragma once

#include <utility>
#include <vector>

#include "contractgen/env.hpp"
#include "contractgen/nn.hpp"

namespace contractgen {

using nn::Matrix;
using nn::Vector;

// Steps are 1-based: beta[t - 1] is the variance added at step t.
struct NoiseSchedule {
  int t_steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  static NoiseSchedule linear(int t_steps, double beta_start = 1e-4, double beta_end = 0.02);
  static NoiseSchedule from_betas(std::vector<double> betas);

  // alpha_bar at step t, with alpha_bar(0) = 1.
  double alpha_bar_at(int t) const;
  void validate() const;
};

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps. t = 0 returns x0.
std::pair<Vector, Vector> forward_noise(const Vector& x0, int t, const NoiseSchedule& schedule,
                                        Rng& rng);

// Predicts the noise in x_t from (x_t, embedding of t, encoded state).
class DenoiserNet {
 public:
  DenoiserNet() = default;
  DenoiserNet(int action_dim, int state_dim, int hidden, int embed_dim, Rng& rng);
  DenoiserNet(nn::Mlp net, int action_dim, int state_dim, int embed_dim);

  Matrix input(const Matrix& x_t, int t, const Matrix& states) const;
  Matrix predict(const Matrix& x_t, int t, const Matrix& states) const;

  int action_dim() const { return action_dim_; }
  int state_dim() const { return state_dim_; }
  int embed_dim() const { return embed_dim_; }
  const nn::Mlp& net() const { return net_; }
  nn::Mlp& net() { return net_; }

 private:
  nn::Mlp net_;
  int action_dim_ = 0, state_dim_ = 0, embed_dim_ = 0;
};

// Fixed elementwise map applied to actions before they reach the critic.
// Log slots read the raw value as an affine decode onto [lo, hi] and return
// 2 log(v / lo) / log(hi / lo) - 1, so that inverse latency is seen on a
// log-latency axis. Other slots pass through unchanged.
struct ActionWarp {
  std::vector<bool> log_slot;  // empty means identity
  double lo = 1.0;
  double hi = 1.0;

  // Log slots at every inverse-latency position of an n-type action.
  static ActionWarp log_latency(int n, double l_max, double l_min);

  bool is_identity() const;
  Matrix apply(const Matrix& actions) const;
  // Elementwise d apply / d action.
  Matrix derivative(const Matrix& actions) const;
};

// Q(s, a): input rows are [warp(action); state].
class CriticNet {
 public:
  CriticNet() = default;
  CriticNet(int action_dim, int state_dim, int hidden, Rng& rng, ActionWarp warp = {});
  CriticNet(nn::Mlp net, int action_dim, int state_dim, ActionWarp warp = {});

  Matrix input(const Matrix& actions, const Matrix& states) const;
  Matrix value(const Matrix& actions, const Matrix& states) const;

  int action_dim() const { return action_dim_; }
  int state_dim() const { return state_dim_; }
  const ActionWarp& warp() const { return warp_; }
  const nn::Mlp& net() const { return net_; }
  nn::Mlp& net() { return net_; }

 private:
  nn::Mlp net_;
  int action_dim_ = 0, state_dim_ = 0;
  ActionWarp warp_;
};

// Reverse update from x_T down to x_0, unclamped. `rng == nullptr` gives the
// deterministic chain; otherwise sigma_t = sqrt(beta_t) noise is added for t > 1.
Matrix reverse_chain(const Matrix& x_T, const Matrix& states, const DenoiserNet& denoiser,
                     const NoiseSchedule& schedule, Rng* rng);

// Draws x_T ~ N(0, I), runs the reverse chain and clamps to [-1, 1].
Matrix generate_actions(const Matrix& states, const DenoiserNet& denoiser,
                        const NoiseSchedule& schedule, Rng& rng, bool deterministic);

ActionVector generate_action(std::span<const double> state_features, const DenoiserNet& denoiser,
                             const NoiseSchedule& schedule, Rng& rng, bool deterministic);

// Mean squared error between Q(s, a) and the observed reward (1 x B).
double critic_loss(const Matrix& states, const Matrix& actions, const Matrix& rewards,
                   const CriticNet& critic, nn::MlpGrads* grads);

// One optimizer step on the critic; returns the loss before the step.
double critic_update(const Matrix& states, const Matrix& actions, const Matrix& rewards,
                     CriticNet& critic, nn::Adam& optimizer);

// Mean Q(s, clamp(x_0)) for the deterministic chain started at x_T. If
// `grads` is given, accumulates d objective / d denoiser parameters, with the
// gradient carried through every reverse step and a straight-through clamp.
double actor_objective(const Matrix& states, const Matrix& x_T, const DenoiserNet& denoiser,
                       const CriticNet& critic, const NoiseSchedule& schedule,
                       nn::MlpGrads* grads);

// Draws x_T, ascends the objective by one optimizer step, returns the
// objective before the step. The critic is not modified.
double actor_update(const Matrix& states, DenoiserNet& denoiser, const CriticNet& critic,
                    const NoiseSchedule& schedule, nn::Adam& optimizer, Rng& rng);

}  // namespace contractgen
