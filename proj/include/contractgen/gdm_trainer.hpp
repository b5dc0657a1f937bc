#pragma once

#include <cstdint>

#include "contractgen/diffusion.hpp"
#include "contractgen/training.hpp"

namespace contractgen {

struct DiffusionPolicyConfig {
  int epochs = 120;
  int states_per_epoch = 512;
  int batch_size = 512;
  double actor_lr = 2e-7;
  double critic_lr = 2e-7;
  double discount = 0.95;  // stored only; episodes are single-step
  double exploration_sigma = 0.1;
  double exploration_sigma_final = 0.01;
  int replay_capacity = 100000;
  int eval_states = 100;
  std::uint64_t seed = 0;

  int t_steps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int hidden = 256;
  int embed_dim = 16;
  int critic_updates_per_epoch = 20;
  int actor_updates_per_epoch = 4;
  // Critic sees inverse-latency slots on a log-latency axis.
  bool critic_log_latency = true;

  void validate() const;
};

struct GdmResult {
  DenoiserNet denoiser;
  CriticNet critic;
  NoiseSchedule schedule;
  TrainingTrace trace;
};

GdmResult train_gdm(const Environment& env, const DiffusionPolicyConfig& cfg,
                    const EpochCallback& on_epoch = {});

// Deterministic actions for the held-out states. The starting noise comes
// from a fixed stream so that every call sees the same x_T.
Matrix gdm_eval_actions(const Environment& env, const std::vector<MarketState>& states,
                        const DenoiserNet& denoiser, const NoiseSchedule& schedule,
                        std::uint64_t seed);

}  // namespace contractgen
