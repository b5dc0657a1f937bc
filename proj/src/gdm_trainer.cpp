#include "contractgen/gdm_trainer.hpp"

#include <chrono>
#include <string>

namespace contractgen {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kEvalNoiseStream = 3;

}  // namespace

void DiffusionPolicyConfig::validate() const {
  if (epochs < 0) throw DomainError("epochs must be >= 0");
  if (states_per_epoch < 1 || batch_size < 1 || replay_capacity < 1 || eval_states < 1) {
    throw DomainError("sizes must be positive");
  }
  if (!(actor_lr > 0) || !(critic_lr > 0)) throw DomainError("learning rates must be positive");
  if (!(discount > 0) || exploration_sigma < 0 || exploration_sigma_final < 0) {
    throw DomainError("discount and exploration must be positive");
  }
  if (t_steps < 1 || hidden < 1 || embed_dim < 2 || embed_dim % 2 != 0) {
    throw DomainError("invalid network or schedule size");
  }
  if (critic_updates_per_epoch < 0 || actor_updates_per_epoch < 0) {
    throw DomainError("update counts must be >= 0");
  }
}

Matrix gdm_eval_actions(const Environment& env, const std::vector<MarketState>& states,
                        const DenoiserNet& denoiser, const NoiseSchedule& schedule,
                        std::uint64_t seed) {
  Rng rng = make_rng(seed, kEvalNoiseStream);
  return generate_actions(env.encode(states), denoiser, schedule, rng, true);
}

GdmResult train_gdm(const Environment& env, const DiffusionPolicyConfig& cfg,
                    const EpochCallback& on_epoch) {
  cfg.validate();
  Rng init_rng = make_rng(cfg.seed, kInitStream);
  Rng rng = make_rng(cfg.seed, kTrainStream);

  GdmResult result;
  result.schedule = NoiseSchedule::linear(cfg.t_steps, cfg.beta_start, cfg.beta_end);
  result.denoiser =
      DenoiserNet(env.action_dim(), env.state_dim(), cfg.hidden, cfg.embed_dim, init_rng);
  const ActionWarp warp =
      cfg.critic_log_latency
          ? ActionWarp::log_latency(env.sampler.n, env.sampler.l_max, env.econ.l_min)
          : ActionWarp{};
  result.critic = CriticNet(env.action_dim(), env.state_dim(), cfg.hidden, init_rng, warp);

  nn::Adam actor_opt(result.denoiser.net().parameter_count(), cfg.actor_lr);
  nn::Adam critic_opt(result.critic.net().parameter_count(), cfg.critic_lr);
  ReplayBuffer replay(cfg.replay_capacity, env.state_dim(), env.action_dim());
  RewardNormalizer normalizer;

  SamplerConfig train_sampler = env.sampler;
  train_sampler.seed = cfg.seed;
  StateSampler sampler(train_sampler);
  std::normal_distribution<double> normal;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double sigma =
        linear_decay(cfg.exploration_sigma, cfg.exploration_sigma_final, epoch, cfg.epochs);

    const std::vector<MarketState> states = sampler.next_batch(cfg.states_per_epoch);
    const Matrix features = env.encode(states);
    Matrix actions = generate_actions(features, result.denoiser, result.schedule, rng, true);
    for (Eigen::Index i = 0; i < actions.size(); ++i) actions.data()[i] += sigma * normal(rng);
    actions = actions.cwiseMax(-1.0).cwiseMin(1.0);
    for (size_t i = 0; i < states.size(); ++i) {
      const auto col = static_cast<Eigen::Index>(i);
      const double r = env.train_reward_of(states[i], actions, col);
      normalizer.observe(r);
      replay.push(features.col(col), actions.col(col), r);
    }

    EpochRecord record;
    record.epoch = epoch;
    try {
      double critic_sum = 0.0;
      for (int k = 0; k < cfg.critic_updates_per_epoch; ++k) {
        const std::vector<int> idx = replay.sample(cfg.batch_size, rng);
        critic_sum += critic_update(replay.states(idx), replay.actions(idx),
                                    normalizer.normalize(replay.rewards(idx)), result.critic,
                                    critic_opt);
      }
      double actor_sum = 0.0;
      for (int k = 0; k < cfg.actor_updates_per_epoch; ++k) {
        const std::vector<int> idx = replay.sample(cfg.batch_size, rng);
        actor_sum += actor_update(replay.states(idx), result.denoiser, result.critic,
                                  result.schedule, actor_opt, rng);
      }
      record.critic_loss =
          cfg.critic_updates_per_epoch > 0 ? critic_sum / cfg.critic_updates_per_epoch : 0.0;
      record.actor_obj =
          cfg.actor_updates_per_epoch > 0 ? actor_sum / cfg.actor_updates_per_epoch : 0.0;
    } catch (const NumericError& e) {
      throw NumericError("gdm epoch " + std::to_string(epoch) + ": " + e.what());
    }

    const Matrix eval_actions =
        gdm_eval_actions(env, env.eval_states, result.denoiser, result.schedule, cfg.seed);
    const PolicyScore score = score_actions(env, env.eval_states, eval_actions);
    record.test_reward = score.mean_utility;
    record.test_penalized = score.mean_penalized;
    record.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - started)
                         .count();
    result.trace.records.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  return result;
}

}  // namespace contractgen
