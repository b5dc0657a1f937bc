#include "contractgen/training.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace contractgen {

Environment Environment::make(SamplerConfig sampler, EconParams econ, RewardConfig train_reward,
                              int eval_count) {
  sampler.validate();
  econ.validate();
  train_reward.validate();
  Environment env;
  env.eval_states = sample_eval_set(sampler, eval_count);
  env.sampler = std::move(sampler);
  env.econ = econ;
  env.train_reward = train_reward;
  return env;
}

Matrix Environment::encode(const std::vector<MarketState>& states) const {
  Matrix out(state_dim(), static_cast<Eigen::Index>(states.size()));
  for (size_t c = 0; c < states.size(); ++c) {
    const std::vector<double> f = encode_state(states[c], sampler);
    for (size_t r = 0; r < f.size(); ++r) out(r, c) = f[r];
  }
  return out;
}

double Environment::train_reward_of(const MarketState& state, const Matrix& actions,
                                    Eigen::Index col) const {
  const Vector a = actions.col(col);
  return reward(state, std::span<const double>(a.data(), a.size()), econ, train_reward);
}

void write_trace_csv(std::ostream& out, const TrainingTrace& trace, bool with_wall_clock) {
  out << "epoch,test_reward,critic_loss,actor_obj,wall_ms\n";
  out.precision(17);
  for (const auto& r : trace.records) {
    out << r.epoch << ',' << r.test_reward << ',' << r.critic_loss << ',' << r.actor_obj << ','
        << (with_wall_clock ? r.wall_ms : 0.0) << '\n';
  }
}

TrainingTrace read_trace_csv(std::istream& in) {
  TrainingTrace trace;
  std::string line;
  if (!std::getline(in, line) || line != "epoch,test_reward,critic_loss,actor_obj,wall_ms") {
    throw DomainError("trace csv has an unexpected header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    EpochRecord r;
    char comma = 0;
    row >> r.epoch >> comma >> r.test_reward >> comma >> r.critic_loss >> comma >> r.actor_obj >>
        comma >> r.wall_ms;
    if (!row) throw DomainError("malformed trace row: " + line);
    trace.records.push_back(r);
  }
  return trace;
}

PolicyScore score_actions(const Environment& env, const std::vector<MarketState>& states,
                          const Matrix& actions) {
  if (actions.cols() != static_cast<Eigen::Index>(states.size())) {
    throw ShapeError("one action column per state expected");
  }
  PolicyScore score;
  RewardConfig penalize = env.train_reward;
  penalize.mode = RewardMode::penalize;
  int feasible = 0;
  for (size_t i = 0; i < states.size(); ++i) {
    const Vector a = actions.col(static_cast<Eigen::Index>(i));
    const std::span<const double> raw(a.data(), a.size());
    Contract c = project_to_feasible(states[i], decode_action(raw, states[i], env.econ));
    const UtilityReport report = evaluate(states[i], c, env.econ);
    feasible += report.feasible ? 1 : 0;
    score.utilities.push_back(report.expected_server);
    score.penalized.push_back(reward(states[i], raw, env.econ, penalize));
    score.contracts.push_back(std::move(c));
  }
  const double n = static_cast<double>(states.size());
  if (states.empty()) return score;
  for (size_t i = 0; i < states.size(); ++i) {
    score.mean_utility += score.utilities[i] / n;
    score.mean_penalized += score.penalized[i] / n;
  }
  double var = 0.0;
  for (double u : score.utilities) var += (u - score.mean_utility) * (u - score.mean_utility) / n;
  score.std_utility = std::sqrt(var);
  score.feasible_rate = feasible / n;
  return score;
}

ReplayBuffer::ReplayBuffer(int capacity, int state_dim, int action_dim)
    : capacity_(capacity), states_(state_dim, capacity), actions_(action_dim, capacity),
      rewards_(capacity) {
  if (capacity < 1) throw DomainError("replay capacity must be positive");
}

void ReplayBuffer::push(const Eigen::Ref<const Vector>& state,
                        const Eigen::Ref<const Vector>& action, double reward) {
  if (state.size() != states_.rows() || action.size() != actions_.rows()) {
    throw ShapeError("transition shape does not match replay buffer");
  }
  states_.col(head_) = state;
  actions_.col(head_) = action;
  rewards_[head_] = reward;
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

std::vector<int> ReplayBuffer::sample(int count, Rng& rng) const {
  if (size_ == 0) throw DomainError("sampling from an empty replay buffer");
  std::uniform_int_distribution<int> pick(0, size_ - 1);
  std::vector<int> idx(count);
  for (int& i : idx) i = pick(rng);
  return idx;
}

Matrix ReplayBuffer::states(const std::vector<int>& idx) const {
  Matrix out(states_.rows(), static_cast<Eigen::Index>(idx.size()));
  for (size_t c = 0; c < idx.size(); ++c) out.col(c) = states_.col(idx[c]);
  return out;
}

Matrix ReplayBuffer::actions(const std::vector<int>& idx) const {
  Matrix out(actions_.rows(), static_cast<Eigen::Index>(idx.size()));
  for (size_t c = 0; c < idx.size(); ++c) out.col(c) = actions_.col(idx[c]);
  return out;
}

Matrix ReplayBuffer::rewards(const std::vector<int>& idx) const {
  Matrix out(1, static_cast<Eigen::Index>(idx.size()));
  for (size_t c = 0; c < idx.size(); ++c) out(0, c) = rewards_[idx[c]];
  return out;
}

void RewardNormalizer::observe(double r) {
  ++count_;
  const double delta = r - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (r - mean_);
}

double RewardNormalizer::stddev() const {
  if (count_ < 2) return 1.0;
  return std::max(std::sqrt(m2_ / static_cast<double>(count_ - 1)), 1e-8);
}

double RewardNormalizer::normalize(double r) const { return (r - mean_) / stddev(); }

Matrix RewardNormalizer::normalize(const Matrix& r) const {
  return (r.array() - mean_) / stddev();
}

double linear_decay(double start, double end, int epoch, int epochs) {
  if (epochs <= 1) return start;
  return start + (end - start) * static_cast<double>(epoch) / (epochs - 1);
}

}  // namespace contractgen
