#include "contractgen/env.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace contractgen {

namespace {

constexpr std::uint64_t kEvalStreamTag = 0x9e3779b97f4a7c15ULL;

std::uint32_t lo32(std::uint64_t v) { return static_cast<std::uint32_t>(v); }
std::uint32_t hi32(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }

}  // namespace

Rng make_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{lo32(seed), hi32(seed), lo32(index), hi32(index)};
  return Rng(seq);
}

void SamplerConfig::validate() const {
  if (n < 1 || m < 1) throw DomainError("sampler needs n >= 1 and m >= 1");
  if (theta_ranges.size() != static_cast<size_t>(n) ||
      dirichlet_alpha.size() != static_cast<size_t>(n)) {
    throw ShapeError("theta_ranges and dirichlet_alpha must have length n");
  }
  for (const auto& [lo, hi] : theta_ranges) {
    if (!(lo > 0) || !(hi > lo)) throw DomainError("theta range must be positive and non-empty");
  }
  for (double a : dirichlet_alpha) {
    if (!(a > 0)) throw DomainError("dirichlet alpha must be positive");
  }
  if (!(l_max > 0)) throw DomainError("l_max must be positive");
}

MarketState sample_state(const SamplerConfig& cfg, std::uint64_t draw_index) {
  Rng rng = make_rng(cfg.seed, draw_index);
  MarketState state;
  state.m = cfg.m;
  state.n = cfg.n;
  state.l_max = cfg.l_max;
  state.theta.resize(cfg.n);
  state.q.resize(cfg.n);

  for (int k = 0; k < cfg.n; ++k) {
    const auto [lo, hi] = cfg.theta_ranges[k];
    std::uniform_real_distribution<double> uni(lo, hi);
    double v = uni(rng);
    while (v <= lo) v = uni(rng);  // open interval
    state.theta[k] = v;
  }
  double total = 0.0;
  for (int k = 0; k < cfg.n; ++k) {
    std::gamma_distribution<double> gamma(cfg.dirichlet_alpha[k], 1.0);
    state.q[k] = gamma(rng);
    total += state.q[k];
  }
  for (double& q : state.q) q /= total;

  std::vector<int> order(cfg.n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return state.theta[a] < state.theta[b]; });
  MarketState sorted = state;
  for (int k = 0; k < cfg.n; ++k) {
    sorted.theta[k] = state.theta[order[k]];
    sorted.q[k] = state.q[order[k]];
  }
  return sorted;
}

StateSampler::StateSampler(SamplerConfig cfg, std::uint64_t first_index)
    : cfg_(std::move(cfg)), next_index_(first_index) {
  cfg_.validate();
}

MarketState StateSampler::next() {
  log_.emplace_back(cfg_.seed, next_index_);
  return sample_state(cfg_, next_index_++);
}

std::vector<MarketState> StateSampler::next_batch(int count) {
  std::vector<MarketState> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(next());
  return out;
}

std::vector<MarketState> sample_eval_set(const SamplerConfig& cfg, int count) {
  SamplerConfig eval_cfg = cfg;
  eval_cfg.seed = cfg.seed ^ kEvalStreamTag;
  StateSampler sampler(eval_cfg);
  return sampler.next_batch(count);
}

std::vector<double> encode_state(const MarketState& state, const SamplerConfig& cfg) {
  if (state.n != cfg.n || cfg.theta_ranges.size() != static_cast<size_t>(state.n)) {
    throw ShapeError("state and sampler config disagree on n");
  }
  std::vector<double> features(2 * state.n);
  for (int k = 0; k < state.n; ++k) {
    features[k] = state.theta[k] / cfg.theta_ranges[k].second;
    features[state.n + k] = state.q[k];
  }
  return features;
}

ActionVector clamp_action(std::span<const double> raw) {
  ActionVector a;
  a.raw.reserve(raw.size());
  for (double v : raw) {
    if (!std::isfinite(v)) throw NumericError("non-finite action component");
    a.raw.push_back(std::clamp(v, -1.0, 1.0));
  }
  return a;
}

Contract decode_action(std::span<const double> raw, const MarketState& state,
                       const EconParams& params) {
  if (raw.size() != static_cast<size_t>(2 * state.n)) {
    throw ShapeError("action length " + std::to_string(raw.size()) + " != 2n");
  }
  const double inv_lo = 1.0 / state.l_max;
  const double inv_hi = 1.0 / params.l_min;
  Contract contract;
  contract.items.resize(state.n);
  for (int k = 0; k < state.n; ++k) {
    const double u_lat = 0.5 * (1.0 + std::clamp(raw[2 * k], -1.0, 1.0));
    const double u_rew = 0.5 * (1.0 + std::clamp(raw[2 * k + 1], -1.0, 1.0));
    contract.items[k].inv_latency = inv_lo + u_lat * (inv_hi - inv_lo);
    contract.items[k].reward = u_rew * params.r_max;
  }
  return contract;
}

void RewardConfig::validate() const {
  if (!std::isfinite(penalty_weight) || penalty_weight < 0) {
    throw DomainError("penalty_weight must be finite and >= 0");
  }
}

double reward(const MarketState& state, std::span<const double> raw,
              const EconParams& params, const RewardConfig& rcfg) {
  const Contract contract = decode_action(raw, state, params);
  if (rcfg.mode == RewardMode::project) {
    return expected_server_utility(state, project_to_feasible(state, contract), params);
  }
  return expected_server_utility(state, contract, params) -
         rcfg.penalty_weight * constraint_violation(state, contract);
}

}  // namespace contractgen
