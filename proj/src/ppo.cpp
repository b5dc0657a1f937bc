#include "contractgen/ppo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

namespace contractgen {

namespace {

constexpr std::uint64_t kInitStream = 11;
constexpr std::uint64_t kTrainStream = 12;
constexpr double kLog2 = 0.69314718055994530942;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

// log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), without overflow.
double log_squash_jacobian(double u) {
  const double x = -2.0 * u;
  const double softplus = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return 2.0 * (kLog2 - u - softplus);
}

}  // namespace

void PpoConfig::validate() const {
  if (epochs < 0) throw DomainError("epochs must be >= 0");
  if (!(clip_epsilon > 0) || !(clip_epsilon < 1)) {
    throw DomainError("clip_epsilon must lie in (0, 1)");
  }
  if (!(policy_lr > 0) || !(value_lr > 0)) throw DomainError("learning rates must be positive");
  if (states_per_epoch < 1 || update_epochs_per_batch < 1 || minibatch_size < 1 ||
      eval_states < 1 || hidden < 1) {
    throw DomainError("sizes must be positive");
  }
  if (!std::isfinite(init_log_std)) throw DomainError("init_log_std must be finite");
}

GaussianPolicyNet::GaussianPolicyNet(int state_dim, int action_dim, int hidden,
                                     double init_log_std, Rng& rng)
    : mean_net_({state_dim, hidden, hidden, action_dim}, nn::Activation::silu, rng),
      log_std_(Vector::Constant(action_dim, init_log_std)) {}

GaussianPolicyNet::GaussianPolicyNet(nn::Mlp mean_net, Vector log_std)
    : mean_net_(std::move(mean_net)), log_std_(std::move(log_std)) {
  if (mean_net_.output_size() != log_std_.size()) {
    throw ShapeError("log_std length must match the mean network output");
  }
}

Matrix GaussianPolicyNet::mean(const Matrix& states) const { return mean_net_.forward(states); }

Matrix GaussianPolicyNet::mean_action(const Matrix& states) const {
  return mean(states).array().tanh();
}

Eigen::Index GaussianPolicyNet::parameter_count() const {
  return mean_net_.parameter_count() + log_std_.size();
}

Vector GaussianPolicyNet::flat_parameters() const {
  Vector flat(parameter_count());
  const Eigen::Index head = mean_net_.parameter_count();
  flat.head(head) = mean_net_.flat_parameters();
  flat.tail(log_std_.size()) = log_std_;
  return flat;
}

void GaussianPolicyNet::set_flat_parameters(const Vector& flat) {
  if (flat.size() != parameter_count()) throw ShapeError("flat parameter size mismatch");
  const Eigen::Index head = mean_net_.parameter_count();
  mean_net_.set_flat_parameters(flat.head(head));
  log_std_ = flat.tail(log_std_.size());
}

double squashed_log_prob(const Vector& pre_squash, const Vector& mean, const Vector& log_std) {
  if (pre_squash.size() != mean.size() || mean.size() != log_std.size()) {
    throw ShapeError("log-prob operands differ in length");
  }
  double lp = 0.0;
  for (Eigen::Index j = 0; j < mean.size(); ++j) {
    const double z = (pre_squash[j] - mean[j]) * std::exp(-log_std[j]);
    lp += -0.5 * z * z - log_std[j] - kLogSqrt2Pi;
    lp -= log_squash_jacobian(pre_squash[j]);
  }
  return lp;
}

PpoBatch ppo_sample(const GaussianPolicyNet& policy, const Matrix& states, Rng& rng) {
  PpoBatch batch;
  batch.states = states;
  const Matrix mu = policy.mean(states);
  const Vector stddev = policy.log_std().array().exp();
  std::normal_distribution<double> normal;
  batch.pre_squash.resize(mu.rows(), mu.cols());
  for (Eigen::Index c = 0; c < mu.cols(); ++c) {
    for (Eigen::Index r = 0; r < mu.rows(); ++r) {
      batch.pre_squash(r, c) = mu(r, c) + stddev[r] * normal(rng);
    }
  }
  batch.actions = batch.pre_squash.array().tanh();
  batch.log_prob.resize(mu.cols());
  for (Eigen::Index c = 0; c < mu.cols(); ++c) {
    batch.log_prob[c] = squashed_log_prob(batch.pre_squash.col(c), mu.col(c), policy.log_std());
  }
  return batch;
}

PpoBatch ppo_collect(const Environment& env, StateSampler& sampler,
                     const GaussianPolicyNet& policy, int count, Rng& rng) {
  const std::vector<MarketState> states = sampler.next_batch(count);
  PpoBatch batch = ppo_sample(policy, env.encode(states), rng);
  batch.reward.resize(count);
  for (int i = 0; i < count; ++i) batch.reward[i] = env.train_reward_of(states[i], batch.actions, i);
  return batch;
}

double ppo_surrogate(const PpoBatch& batch, const Vector& advantages,
                     const GaussianPolicyNet& policy, double clip_epsilon, Vector* grad) {
  const Eigen::Index n = batch.states.cols();
  if (advantages.size() != n || batch.log_prob.size() != n) {
    throw ShapeError("advantages and batch disagree in size");
  }
  nn::MlpCache cache;
  const Matrix mu = policy.mean_net().forward(batch.states, cache);
  const Vector& log_std = policy.log_std();
  const Vector inv_var = (-2.0 * log_std).array().exp();

  double total = 0.0;
  Matrix d_mu = Matrix::Zero(mu.rows(), n);
  Vector d_log_std = Vector::Zero(log_std.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lp = squashed_log_prob(batch.pre_squash.col(i), mu.col(i), log_std);
    const double ratio = std::exp(lp - batch.log_prob[i]);
    const double a = advantages[i];
    const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    const double unclipped_term = ratio * a;
    const double clipped_term = clipped * a;
    total += std::min(unclipped_term, clipped_term);
    // The clipped branch is constant in the parameters.
    if (unclipped_term <= clipped_term) {
      const double coef = ratio * a / static_cast<double>(n);
      for (Eigen::Index j = 0; j < mu.rows(); ++j) {
        const double diff = batch.pre_squash(j, i) - mu(j, i);
        d_mu(j, i) = coef * diff * inv_var[j];
        d_log_std[j] += coef * (diff * diff * inv_var[j] - 1.0);
      }
    }
  }
  const double surrogate = total / static_cast<double>(n);
  if (!std::isfinite(surrogate)) throw NumericError("non-finite ppo surrogate");
  if (grad != nullptr) {
    nn::MlpGrads g = policy.mean_net().zero_grads();
    policy.mean_net().backward(cache, d_mu, &g);
    grad->resize(policy.parameter_count());
    grad->head(policy.mean_net().parameter_count()) = g.flatten();
    grad->tail(log_std.size()) = d_log_std;
  }
  return surrogate;
}

double value_loss(const Matrix& states, const Vector& targets, const nn::Mlp& value,
                  nn::MlpGrads* grads) {
  nn::MlpCache cache;
  const Matrix v = value.forward(states, cache);
  Matrix grad;
  const double loss = nn::mse_loss(v, targets.transpose(), grads != nullptr ? &grad : nullptr);
  if (!std::isfinite(loss)) throw NumericError("non-finite value loss");
  if (grads != nullptr) value.backward(cache, grad, grads);
  return loss;
}

nn::Mlp make_value_net(int state_dim, int hidden, Rng& rng) {
  return nn::Mlp({state_dim, hidden, hidden, 1}, nn::Activation::silu, rng);
}

namespace {

PpoBatch take(const PpoBatch& batch, const std::vector<int>& idx) {
  PpoBatch out;
  const auto n = static_cast<Eigen::Index>(idx.size());
  out.states.resize(batch.states.rows(), n);
  out.actions.resize(batch.actions.rows(), n);
  out.pre_squash.resize(batch.pre_squash.rows(), n);
  out.log_prob.resize(n);
  out.reward.resize(n);
  for (Eigen::Index c = 0; c < n; ++c) {
    out.states.col(c) = batch.states.col(idx[c]);
    out.actions.col(c) = batch.actions.col(idx[c]);
    out.pre_squash.col(c) = batch.pre_squash.col(idx[c]);
    out.log_prob[c] = batch.log_prob[idx[c]];
    out.reward[c] = batch.reward[idx[c]];
  }
  return out;
}

}  // namespace

PpoLosses ppo_update(const PpoBatch& batch, GaussianPolicyNet& policy, nn::Mlp& value,
                     PpoOptimizers& optimizers, const PpoConfig& cfg, Rng& rng) {
  const Eigen::Index n = batch.states.cols();
  if (batch.reward.size() != n) throw ShapeError("batch has no rewards");
  const Vector baseline = value.forward(batch.states).row(0).transpose();
  const Vector advantages_all = batch.reward - baseline;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  PpoLosses losses;
  int steps = 0;
  for (int pass = 0; pass < cfg.update_epochs_per_batch; ++pass) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += cfg.minibatch_size) {
      const Eigen::Index stop = std::min<Eigen::Index>(n, start + cfg.minibatch_size);
      const std::vector<int> idx(order.begin() + start, order.begin() + stop);
      const PpoBatch mb = take(batch, idx);
      Vector adv(mb.reward.size());
      for (size_t k = 0; k < idx.size(); ++k) adv[k] = advantages_all[idx[k]];

      Vector grad;
      const double surrogate = ppo_surrogate(mb, adv, policy, cfg.clip_epsilon, &grad);
      Vector params = policy.flat_parameters();
      optimizers.policy.step(params, -grad);
      policy.set_flat_parameters(params);

      nn::MlpGrads vgrads = value.zero_grads();
      const double vloss = value_loss(mb.states, mb.reward, value, &vgrads);
      optimizers.value.step(value, vgrads);

      losses.policy_loss += -surrogate;
      losses.value_loss += vloss;
      ++steps;
    }
  }
  if (steps > 0) {
    losses.policy_loss /= steps;
    losses.value_loss /= steps;
  }
  return losses;
}

PpoResult ppo_train(const Environment& env, const PpoConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  Rng init_rng = make_rng(cfg.seed, kInitStream);
  Rng rng = make_rng(cfg.seed, kTrainStream);

  PpoResult result;
  result.policy =
      GaussianPolicyNet(env.state_dim(), env.action_dim(), cfg.hidden, cfg.init_log_std, init_rng);
  result.value = make_value_net(env.state_dim(), cfg.hidden, init_rng);
  PpoOptimizers optimizers{nn::Adam(result.policy.parameter_count(), cfg.policy_lr),
                           nn::Adam(result.value.parameter_count(), cfg.value_lr)};
  RewardNormalizer normalizer;

  SamplerConfig train_sampler = env.sampler;
  train_sampler.seed = cfg.seed;
  StateSampler sampler(train_sampler);

  const Matrix eval_features = env.encode(env.eval_states);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    PpoBatch batch = ppo_collect(env, sampler, result.policy, cfg.states_per_epoch, rng);
    for (Eigen::Index i = 0; i < batch.reward.size(); ++i) normalizer.observe(batch.reward[i]);
    for (Eigen::Index i = 0; i < batch.reward.size(); ++i) {
      batch.reward[i] = normalizer.normalize(batch.reward[i]);
    }

    EpochRecord record;
    record.epoch = epoch;
    try {
      const PpoLosses losses =
          ppo_update(batch, result.policy, result.value, optimizers, cfg, rng);
      record.critic_loss = losses.value_loss;
      record.actor_obj = -losses.policy_loss;
    } catch (const NumericError& e) {
      throw NumericError("ppo epoch " + std::to_string(epoch) + ": " + e.what());
    }

    const PolicyScore score =
        score_actions(env, env.eval_states, result.policy.mean_action(eval_features));
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
