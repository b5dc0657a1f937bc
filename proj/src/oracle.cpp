#include "contractgen/oracle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace contractgen {

std::string to_string(OracleMethod method) {
  switch (method) {
    case OracleMethod::closed_form: return "closed_form";
    case OracleMethod::grid: return "grid";
    case OracleMethod::ascent: return "ascent";
  }
  return "unknown";
}

void GridSpec::validate() const {
  if (latency_points < 2 || reward_points < 2) {
    throw DomainError("grid needs at least 2 points per axis");
  }
}

namespace {

// Latency interval on which the IR boundary reward stays within [0, r_max].
std::pair<double, double> feasible_latency_range(const EconParams& params, double l_max) {
  const double lo = std::max(params.l_min, l_max / (1.0 + params.r_max));
  if (lo > l_max) throw DomainError("l_min exceeds l_max");
  return {lo, l_max};
}

OracleSolution finish(const MarketState& state, const EconParams& params, Contract contract,
                      OracleMethod method) {
  OracleSolution sol;
  sol.method = method;
  if (!evaluate(state, contract, params).feasible) {
    contract = project_to_feasible(state, contract);
  }
  sol.expected_server = expected_server_utility(state, contract, params);
  sol.contract = std::move(contract);
  return sol;
}

struct Axis {
  std::vector<double> latency;
  std::vector<double> inv_latency;
  std::vector<double> reward;
};

Axis make_axes(const GridSpec& grid, const EconParams& params, double l_max) {
  grid.validate();
  const double l_lo = grid.latency_lo.value_or(params.l_min);
  const double l_hi = grid.latency_hi.value_or(l_max);
  const double r_lo = grid.reward_lo.value_or(0.0);
  const double r_hi = grid.reward_hi.value_or(params.r_max);
  if (!(l_lo > 0) || l_hi < l_lo || r_hi < r_lo) throw DomainError("invalid grid range");
  Axis axis;
  const double ratio = std::log(l_hi / l_lo);
  for (int i = 0; i < grid.latency_points; ++i) {
    const double frac = static_cast<double>(i) / (grid.latency_points - 1);
    const double l = (i == grid.latency_points - 1) ? l_hi : l_lo * std::exp(ratio * frac);
    axis.latency.push_back(l);
    axis.inv_latency.push_back(1.0 / l);
  }
  for (int j = 0; j < grid.reward_points; ++j) {
    const double frac = static_cast<double>(j) / (grid.reward_points - 1);
    axis.reward.push_back(r_lo + (r_hi - r_lo) * frac);
  }
  return axis;
}

// Per-type scan; ties resolve to the lowest latency index, then lowest reward index.
Contract per_type_scan(const MarketState& state, const EconParams& params, const Axis& axis) {
  Contract contract;
  for (int k = 0; k < state.n; ++k) {
    const double theta = state.theta[k];
    double best = -std::numeric_limits<double>::infinity();
    int best_i = -1, best_j = -1;
    for (size_t i = 0; i < axis.latency.size(); ++i) {
      const double inv = axis.inv_latency[i];
      const double cost = theta * (state.l_max * inv - 1.0);
      const double latency_term = params.a2 * std::pow(axis.latency[i] / state.l_max, params.b2);
      for (size_t j = 0; j < axis.reward.size(); ++j) {
        const double r = axis.reward[j];
        if (theta * r - cost < -kFeasibilityTolerance) continue;
        const double value = -latency_term - r;
        if (value > best) {
          best = value;
          best_i = static_cast<int>(i);
          best_j = static_cast<int>(j);
        }
      }
    }
    if (best_i < 0) {
      throw InfeasibleGridError("infeasible grid: no IR-feasible point for type " +
                                std::to_string(k));
    }
    contract.items.push_back({axis.inv_latency[best_i], axis.reward[best_j]});
  }
  return contract;
}

}  // namespace

OracleSolution closed_form_contract(const MarketState& state, const EconParams& params) {
  state.validate();
  params.validate();
  const auto [lo, hi] = feasible_latency_range(params, state.l_max);
  const double stationary = state.l_max / std::pow(params.a2 * params.b2, 1.0 / (params.b2 + 1.0));
  const double latency = std::clamp(stationary, lo, hi);
  ContractItem item;
  item.inv_latency = 1.0 / latency;
  item.reward = std::max(0.0, state.l_max * item.inv_latency - 1.0);
  Contract contract{std::vector<ContractItem>(state.n, item)};
  OracleSolution sol = finish(state, params, std::move(contract), OracleMethod::closed_form);
  sol.clamped = latency != stationary;
  return sol;
}

OracleSolution joint_grid_scan(const MarketState& state, const EconParams& params,
                               const GridSpec& grid) {
  state.validate();
  if (state.n != 2) throw ShapeError("joint grid scan supports n == 2 only");
  const Axis axis = make_axes(grid, params, state.l_max);

  struct Point {
    ContractItem item;
    double net;
    std::array<double, 2> server;
  };
  std::vector<Point> points;
  points.reserve(axis.latency.size() * axis.reward.size());
  for (size_t i = 0; i < axis.latency.size(); ++i) {
    for (size_t j = 0; j < axis.reward.size(); ++j) {
      Point p;
      p.item = {axis.inv_latency[i], axis.reward[j]};
      p.net = net_term(p.item, state.l_max);
      for (int k = 0; k < 2; ++k) {
        p.server[k] = server_utility_per_type(state.theta[k], p.item, params, state.l_max);
      }
      points.push_back(p);
    }
  }

  const double t1 = state.theta[0], t2 = state.theta[1];
  double best = -std::numeric_limits<double>::infinity();
  int best_a = -1, best_b = -1;
  for (size_t a = 0; a < points.size(); ++a) {
    const Point& pa = points[a];
    if (t1 * pa.net < -kFeasibilityTolerance) continue;
    for (size_t b = 0; b < points.size(); ++b) {
      const Point& pb = points[b];
      if (t2 * pb.net < -kFeasibilityTolerance) continue;
      if (t1 * pa.net < t1 * pb.net - kFeasibilityTolerance) continue;
      if (t2 * pb.net < t2 * pa.net - kFeasibilityTolerance) continue;
      const double value = state.m * (state.q[0] * pa.server[0] + state.q[1] * pb.server[1]);
      if (value > best) {
        best = value;
        best_a = static_cast<int>(a);
        best_b = static_cast<int>(b);
      }
    }
  }
  if (best_a < 0) throw InfeasibleGridError("infeasible grid: no feasible item pair");
  Contract contract{{points[best_a].item, points[best_b].item}};
  return finish(state, params, std::move(contract), OracleMethod::grid);
}

OracleSolution grid_search_contract(const MarketState& state, const EconParams& params,
                                    const GridSpec& grid) {
  state.validate();
  params.validate();
  const Axis axis = make_axes(grid, params, state.l_max);
  Contract contract = per_type_scan(state, params, axis);
  if (!evaluate(state, contract, params).feasible) {
    throw SeparabilityError("per-type grid optima violate IC");
  }

  if (state.n == 2) {
    GridSpec coarse = grid;
    coarse.latency_points = std::min(grid.latency_points, 40);
    coarse.reward_points = std::min(grid.reward_points, 40);
    const Axis coarse_axis = make_axes(coarse, params, state.l_max);
    const double separable =
        expected_server_utility(state, per_type_scan(state, params, coarse_axis), params);
    const double joint = joint_grid_scan(state, params, coarse).expected_server;
    if (std::abs(separable - joint) > 1e-9 * std::max(1.0, std::abs(joint))) {
      throw SeparabilityError("joint scan found " + std::to_string(joint) +
                              " but per-type reduction gives " + std::to_string(separable));
    }
  }

  OracleSolution sol;
  sol.method = OracleMethod::grid;
  sol.expected_server = expected_server_utility(state, contract, params);
  sol.contract = std::move(contract);
  return sol;
}

LatencyReward project_item(LatencyReward point, const EconParams& params, double l_max) {
  const auto [curve_lo, curve_hi] = feasible_latency_range(params, l_max);
  const double l0 = point.latency, r0 = point.reward;
  const bool in_box = l0 >= params.l_min && l0 <= l_max && r0 >= 0 && r0 <= params.r_max;
  if (in_box && r0 >= l_max / l0 - 1.0 - 1e-12) return point;

  std::vector<LatencyReward> candidates;
  candidates.push_back({std::clamp(l0, curve_lo, l_max), params.r_max});
  candidates.push_back({l_max, std::clamp(r0, 0.0, params.r_max)});
  const double left_floor = l_max / params.l_min - 1.0;
  if (left_floor <= params.r_max) {
    candidates.push_back({params.l_min, std::clamp(r0, left_floor, params.r_max)});
  }

  // Nearest point on the IR boundary R = l_max / L - 1, L in [curve_lo, curve_hi].
  auto dist2 = [&](double l) {
    const double dr = l_max / l - 1.0 - r0;
    return (l - l0) * (l - l0) + dr * dr;
  };
  auto slope = [&](double l) {
    return (l - l0) - (l_max / l - 1.0 - r0) * l_max / (l * l);
  };
  constexpr int kSamples = 512;
  const double log_span = std::log(curve_hi / curve_lo);
  auto sample_at = [&](int i) {
    return i == kSamples - 1 ? curve_hi
                             : curve_lo * std::exp(log_span * i / (kSamples - 1));
  };
  int best_i = 0;
  double best_d = dist2(sample_at(0));
  for (int i = 1; i < kSamples; ++i) {
    const double d = dist2(sample_at(i));
    if (d < best_d) {
      best_d = d;
      best_i = i;
    }
  }
  double lo = sample_at(std::max(0, best_i - 1));
  double hi = sample_at(std::min(kSamples - 1, best_i + 1));
  double curve_l = sample_at(best_i);
  if (slope(lo) < 0 && slope(hi) > 0) {
    for (int it = 0; it < 200 && hi - lo > 0; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      (slope(mid) < 0 ? lo : hi) = mid;
    }
    curve_l = dist2(lo) <= dist2(hi) ? lo : hi;
  }
  candidates.push_back({curve_l, std::max(0.0, l_max / curve_l - 1.0)});

  LatencyReward best = candidates.front();
  double best_dist = std::numeric_limits<double>::infinity();
  for (const auto& c : candidates) {
    const double d = (c.latency - l0) * (c.latency - l0) + (c.reward - r0) * (c.reward - r0);
    if (d < best_dist) {
      best_dist = d;
      best = c;
    }
  }
  return best;
}

OracleSolution projected_ascent(const MarketState& state, const EconParams& params,
                                const Contract& init, int steps, double lr) {
  state.validate();
  params.validate();
  if (init.items.size() != static_cast<size_t>(state.n)) {
    throw ShapeError("init contract does not match state");
  }
  if (!(lr > 0)) throw DomainError("ascent step size must be positive");

  const double l_max = state.l_max;
  auto objective = [&](const LatencyReward& x) {
    return -params.a2 * std::pow(x.latency / l_max, params.b2) - x.reward;
  };
  auto gradient = [&](const LatencyReward& x) {
    return LatencyReward{
        -params.a2 * params.b2 * std::pow(x.latency / l_max, params.b2 - 1.0) / l_max, -1.0};
  };
  constexpr double kTol = 1e-6;
  constexpr double kArmijo = 1e-4;
  constexpr double kMaxStep = 1e8;

  Contract contract;
  int max_iterations = 0;
  for (int k = 0; k < state.n; ++k) {
    LatencyReward x = project_item({init.items[k].latency(), init.items[k].reward}, params, l_max);
    double step = lr;
    int it = 0;
    for (; it < steps; ++it) {
      const LatencyReward g = gradient(x);
      const double fx = objective(x);
      LatencyReward y{};
      double moved = 0.0;
      while (true) {
        y = project_item({x.latency + step * g.latency, x.reward + step * g.reward}, params, l_max);
        const double dl = y.latency - x.latency, dr = y.reward - x.reward;
        moved = std::hypot(dl, dr);
        if (!std::isfinite(y.latency) || !std::isfinite(y.reward)) {
          throw NumericError("projected ascent diverged at step " + std::to_string(it));
        }
        if (objective(y) >= fx + kArmijo * (g.latency * dl + g.reward * dr) || step < 1e-12) break;
        step *= 0.5;
      }
      if (moved / step < kTol) break;
      x = y;
      step = std::min(2.0 * step, kMaxStep);
    }
    max_iterations = std::max(max_iterations, it);
    contract.items.push_back({1.0 / x.latency, x.reward});
  }
  OracleSolution sol = finish(state, params, std::move(contract), OracleMethod::ascent);
  sol.iterations = max_iterations;
  return sol;
}

}  // namespace contractgen
