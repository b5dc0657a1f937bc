#include "contractgen/diffusion.hpp"

#include <cmath>
#include <string>

namespace contractgen {

NoiseSchedule NoiseSchedule::linear(int t_steps, double beta_start, double beta_end) {
  if (t_steps < 1) throw DomainError("schedule needs at least one step");
  std::vector<double> betas(t_steps);
  for (int i = 0; i < t_steps; ++i) {
    betas[i] = t_steps == 1 ? beta_start
                            : beta_start + (beta_end - beta_start) * i / (t_steps - 1.0);
  }
  return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  NoiseSchedule s;
  s.t_steps = static_cast<int>(betas.size());
  s.beta = std::move(betas);
  double running = 1.0;
  for (double b : s.beta) {
    s.alpha.push_back(1.0 - b);
    running *= 1.0 - b;
    s.alpha_bar.push_back(running);
  }
  s.validate();
  return s;
}

double NoiseSchedule::alpha_bar_at(int t) const {
  if (t < 0 || t > t_steps) throw DomainError("diffusion step out of range");
  return t == 0 ? 1.0 : alpha_bar[t - 1];
}

void NoiseSchedule::validate() const {
  if (t_steps < 1 || beta.size() != static_cast<size_t>(t_steps)) {
    throw ShapeError("schedule length mismatch");
  }
  for (int i = 0; i < t_steps; ++i) {
    if (!(beta[i] > 0 && beta[i] < 1)) throw DomainError("beta must lie in (0, 1)");
    if (i > 0 && !(alpha_bar[i] < alpha_bar[i - 1])) {
      throw DomainError("alpha_bar must be strictly decreasing");
    }
  }
}

std::pair<Vector, Vector> forward_noise(const Vector& x0, int t, const NoiseSchedule& schedule,
                                        Rng& rng) {
  const double ab = schedule.alpha_bar_at(t);
  std::normal_distribution<double> normal;
  Vector eps(x0.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = normal(rng);
  Vector xt = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
  return {std::move(xt), std::move(eps)};
}

DenoiserNet::DenoiserNet(int action_dim, int state_dim, int hidden, int embed_dim, Rng& rng)
    : net_({action_dim + embed_dim + state_dim, hidden, hidden, action_dim},
           nn::Activation::silu, rng),
      action_dim_(action_dim), state_dim_(state_dim), embed_dim_(embed_dim) {}

DenoiserNet::DenoiserNet(nn::Mlp net, int action_dim, int state_dim, int embed_dim)
    : net_(std::move(net)), action_dim_(action_dim), state_dim_(state_dim),
      embed_dim_(embed_dim) {
  if (net_.input_size() != action_dim + embed_dim + state_dim ||
      net_.output_size() != action_dim) {
    throw ShapeError("denoiser network shape does not match its dimensions");
  }
}

Matrix DenoiserNet::input(const Matrix& x_t, int t, const Matrix& states) const {
  if (x_t.rows() != action_dim_ || states.rows() != state_dim_ || x_t.cols() != states.cols()) {
    throw ShapeError("denoiser input shape mismatch");
  }
  Matrix in(action_dim_ + embed_dim_ + state_dim_, x_t.cols());
  in.topRows(action_dim_) = x_t;
  in.middleRows(action_dim_, embed_dim_) =
      nn::sinusoidal_embedding(t, embed_dim_).replicate(1, x_t.cols());
  in.bottomRows(state_dim_) = states;
  return in;
}

Matrix DenoiserNet::predict(const Matrix& x_t, int t, const Matrix& states) const {
  return net_.forward(input(x_t, t, states));
}

ActionWarp ActionWarp::log_latency(int n, double l_max, double l_min) {
  if (n < 1 || !(l_min > 0) || !(l_max > l_min)) throw DomainError("invalid latency warp");
  ActionWarp w;
  w.log_slot.assign(2 * n, false);
  for (int k = 0; k < n; ++k) w.log_slot[2 * k] = true;
  w.lo = 1.0 / l_max;
  w.hi = 1.0 / l_min;
  return w;
}

bool ActionWarp::is_identity() const {
  for (bool b : log_slot) {
    if (b) return false;
  }
  return true;
}

Matrix ActionWarp::apply(const Matrix& actions) const {
  if (is_identity()) return actions;
  if (actions.rows() != static_cast<Eigen::Index>(log_slot.size())) {
    throw ShapeError("warp length mismatch");
  }
  Matrix out = actions;
  const double span = std::log(hi / lo);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    if (!log_slot[r]) continue;
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      const double v = lo + (hi - lo) * 0.5 * (1.0 + actions(r, c));
      out(r, c) = 2.0 * std::log(v / lo) / span - 1.0;
    }
  }
  return out;
}

Matrix ActionWarp::derivative(const Matrix& actions) const {
  Matrix out = Matrix::Ones(actions.rows(), actions.cols());
  if (is_identity()) return out;
  if (actions.rows() != static_cast<Eigen::Index>(log_slot.size())) {
    throw ShapeError("warp length mismatch");
  }
  const double span = std::log(hi / lo);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    if (!log_slot[r]) continue;
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      const double v = lo + (hi - lo) * 0.5 * (1.0 + actions(r, c));
      out(r, c) = (hi - lo) / (v * span);
    }
  }
  return out;
}

CriticNet::CriticNet(int action_dim, int state_dim, int hidden, Rng& rng, ActionWarp warp)
    : net_({action_dim + state_dim, hidden, hidden, 1}, nn::Activation::silu, rng),
      action_dim_(action_dim), state_dim_(state_dim), warp_(std::move(warp)) {
  if (!warp_.is_identity() && warp_.log_slot.size() != static_cast<size_t>(action_dim)) {
    throw ShapeError("warp length mismatch");
  }
}

CriticNet::CriticNet(nn::Mlp net, int action_dim, int state_dim, ActionWarp warp)
    : net_(std::move(net)), action_dim_(action_dim), state_dim_(state_dim),
      warp_(std::move(warp)) {
  if (net_.input_size() != action_dim + state_dim || net_.output_size() != 1) {
    throw ShapeError("critic network shape does not match its dimensions");
  }
  if (!warp_.is_identity() && warp_.log_slot.size() != static_cast<size_t>(action_dim)) {
    throw ShapeError("warp length mismatch");
  }
}

Matrix CriticNet::input(const Matrix& actions, const Matrix& states) const {
  if (actions.rows() != action_dim_ || states.rows() != state_dim_ ||
      actions.cols() != states.cols()) {
    throw ShapeError("critic input shape mismatch");
  }
  Matrix in(action_dim_ + state_dim_, actions.cols());
  in.topRows(action_dim_) = warp_.apply(actions);
  in.bottomRows(state_dim_) = states;
  return in;
}

Matrix CriticNet::value(const Matrix& actions, const Matrix& states) const {
  return net_.forward(input(actions, states));
}

namespace {

double posterior_scale(const NoiseSchedule& s, int t) { return 1.0 / std::sqrt(s.alpha[t - 1]); }

double noise_scale(const NoiseSchedule& s, int t) {
  return s.beta[t - 1] / std::sqrt(1.0 - s.alpha_bar[t - 1]);
}

}  // namespace

Matrix reverse_chain(const Matrix& x_T, const Matrix& states, const DenoiserNet& denoiser,
                     const NoiseSchedule& schedule, Rng* rng) {
  Matrix x = x_T;
  std::normal_distribution<double> normal;
  for (int t = schedule.t_steps; t >= 1; --t) {
    const Matrix eps = denoiser.predict(x, t, states);
    x = posterior_scale(schedule, t) * (x - noise_scale(schedule, t) * eps);
    if (rng != nullptr && t > 1) {
      const double sigma = std::sqrt(schedule.beta[t - 1]);
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += sigma * normal(*rng);
    }
    if (!x.allFinite()) {
      throw NumericError("non-finite value in reverse chain at step " + std::to_string(t));
    }
  }
  return x;
}

Matrix generate_actions(const Matrix& states, const DenoiserNet& denoiser,
                        const NoiseSchedule& schedule, Rng& rng, bool deterministic) {
  std::normal_distribution<double> normal;
  Matrix x_T(denoiser.action_dim(), states.cols());
  for (Eigen::Index i = 0; i < x_T.size(); ++i) x_T.data()[i] = normal(rng);
  Matrix x0 = reverse_chain(x_T, states, denoiser, schedule, deterministic ? nullptr : &rng);
  return x0.cwiseMax(-1.0).cwiseMin(1.0);
}

ActionVector generate_action(std::span<const double> state_features, const DenoiserNet& denoiser,
                             const NoiseSchedule& schedule, Rng& rng, bool deterministic) {
  Matrix states(static_cast<Eigen::Index>(state_features.size()), 1);
  for (size_t i = 0; i < state_features.size(); ++i) states(i, 0) = state_features[i];
  const Matrix a = generate_actions(states, denoiser, schedule, rng, deterministic);
  return ActionVector{std::vector<double>(a.data(), a.data() + a.size())};
}

double critic_loss(const Matrix& states, const Matrix& actions, const Matrix& rewards,
                   const CriticNet& critic, nn::MlpGrads* grads) {
  nn::MlpCache cache;
  const Matrix q = critic.net().forward(critic.input(actions, states), cache);
  Matrix grad;
  const double loss = nn::mse_loss(q, rewards, grads != nullptr ? &grad : nullptr);
  if (!std::isfinite(loss)) throw NumericError("non-finite critic loss");
  if (grads != nullptr) critic.net().backward(cache, grad, grads);
  return loss;
}

double critic_update(const Matrix& states, const Matrix& actions, const Matrix& rewards,
                     CriticNet& critic, nn::Adam& optimizer) {
  nn::MlpGrads grads = critic.net().zero_grads();
  const double loss = critic_loss(states, actions, rewards, critic, &grads);
  optimizer.step(critic.net(), grads);
  return loss;
}

double actor_objective(const Matrix& states, const Matrix& x_T, const DenoiserNet& denoiser,
                       const CriticNet& critic, const NoiseSchedule& schedule,
                       nn::MlpGrads* grads) {
  const int steps = schedule.t_steps;
  const Eigen::Index batch = states.cols();
  // chain[t] holds x_t; chain[0] is the unclamped output.
  std::vector<Matrix> chain(steps + 1);
  std::vector<nn::MlpCache> caches(grads != nullptr ? steps + 1 : 1);
  chain[steps] = x_T;
  for (int t = steps; t >= 1; --t) {
    nn::MlpCache& cache = caches[grads != nullptr ? t : 0];
    const Matrix eps = denoiser.net().forward(denoiser.input(chain[t], t, states), cache);
    chain[t - 1] = posterior_scale(schedule, t) * (chain[t] - noise_scale(schedule, t) * eps);
    if (!chain[t - 1].allFinite()) {
      throw NumericError("non-finite value in reverse chain at step " + std::to_string(t));
    }
  }
  const Matrix action = chain[0].cwiseMax(-1.0).cwiseMin(1.0);

  nn::MlpCache critic_cache;
  const Matrix q = critic.net().forward(critic.input(action, states), critic_cache);
  const double objective = q.mean();
  if (!std::isfinite(objective)) throw NumericError("non-finite actor objective");
  if (grads == nullptr) return objective;

  const Matrix dq = Matrix::Constant(1, batch, 1.0 / static_cast<double>(batch));
  const Matrix d_input = critic.net().backward(critic_cache, dq, nullptr);
  Matrix g =
      d_input.topRows(denoiser.action_dim()).cwiseProduct(critic.warp().derivative(action));
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (std::abs(chain[0].data()[i]) > 1.0) g.data()[i] = 0.0;
  }

  for (int t = 1; t <= steps; ++t) {
    const double c1 = posterior_scale(schedule, t);
    const double c2 = noise_scale(schedule, t);
    const Matrix d_eps = (-c1 * c2) * g;
    const Matrix d_in = denoiser.net().backward(caches[t], d_eps, grads);
    caches[t] = nn::MlpCache{};
    g = c1 * g + d_in.topRows(denoiser.action_dim());
  }
  for (const auto& w : grads->weight) {
    if (!w.allFinite()) throw NumericError("non-finite actor gradient");
  }
  return objective;
}

double actor_update(const Matrix& states, DenoiserNet& denoiser, const CriticNet& critic,
                    const NoiseSchedule& schedule, nn::Adam& optimizer, Rng& rng) {
  std::normal_distribution<double> normal;
  Matrix x_T(denoiser.action_dim(), states.cols());
  for (Eigen::Index i = 0; i < x_T.size(); ++i) x_T.data()[i] = normal(rng);
  nn::MlpGrads grads = denoiser.net().zero_grads();
  const double objective = actor_objective(states, x_T, denoiser, critic, schedule, &grads);
  // The optimizer minimizes; flip the sign to ascend.
  for (auto& w : grads.weight) w = -w;
  for (auto& b : grads.bias) b = -b;
  optimizer.step(denoiser.net(), grads);
  return objective;
}

}  // namespace contractgen
