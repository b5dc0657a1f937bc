#include "contractgen/contract.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace contractgen {

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw DomainError(std::string("non-finite ") + what);
  }
}

void require_aligned(const MarketState& state, const Contract& contract) {
  if (contract.items.size() != static_cast<size_t>(state.n) ||
      state.theta.size() != static_cast<size_t>(state.n) ||
      state.q.size() != static_cast<size_t>(state.n)) {
    throw ShapeError("contract has " + std::to_string(contract.items.size()) +
                     " items but state has n=" + std::to_string(state.n));
  }
}

}  // namespace

void EconParams::validate() const {
  for (double v : {a1, a2, b1, b2, r_max, l_min}) require_finite(v, "econ parameter");
  if (a1 <= 0 || a2 <= 0) throw DomainError("a1 and a2 must be positive");
  if (b1 < 1 || b2 < 1) throw DomainError("b1 and b2 must be >= 1");
  if (r_max <= 0) throw DomainError("r_max must be positive");
  if (l_min <= 0) throw DomainError("l_min must be positive");
}

void MarketState::validate() const {
  if (m < 1 || n < 1) throw DomainError("m and n must be >= 1");
  if (q.size() != static_cast<size_t>(n) || theta.size() != static_cast<size_t>(n)) {
    throw ShapeError("q and theta must have length n");
  }
  require_finite(l_max, "l_max");
  if (l_max <= 0) throw DomainError("l_max must be positive");
  double total = 0.0;
  for (int k = 0; k < n; ++k) {
    require_finite(q[k], "q");
    require_finite(theta[k], "theta");
    if (q[k] < 0 || q[k] > 1) throw DomainError("q outside [0, 1]");
    if (theta[k] <= 0) throw DomainError("theta must be positive");
    if (k > 0 && theta[k] < theta[k - 1]) throw DomainError("theta not ascending");
    total += q[k];
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("q does not sum to 1");
}

double user_utility(double theta, const ContractItem& item, double l_max) {
  require_finite(theta, "theta");
  require_finite(item.inv_latency, "inv_latency");
  require_finite(item.reward, "reward");
  require_finite(l_max, "l_max");
  if (theta <= 0 || l_max <= 0 || item.inv_latency <= 0) {
    throw DomainError("user_utility needs theta, l_max and inv_latency > 0");
  }
  return theta * item.reward - theta * (l_max * item.inv_latency - 1.0);
}

double server_utility_per_type(double theta, const ContractItem& item,
                               const EconParams& params, double l_max) {
  require_finite(theta, "theta");
  require_finite(item.inv_latency, "inv_latency");
  require_finite(item.reward, "reward");
  if (theta <= 0 || l_max <= 0 || item.inv_latency <= 0) {
    throw DomainError("server utility needs theta, l_max and inv_latency > 0");
  }
  const double revenue = params.a1 * std::pow(theta, params.b1) -
                         params.a2 * std::pow(item.latency() / l_max, params.b2);
  const double u = revenue - item.reward;
  require_finite(u, "server utility");
  return u;
}

double expected_server_utility(const MarketState& state, const Contract& contract,
                               const EconParams& params) {
  require_aligned(state, contract);
  double sum = 0.0;
  for (int k = 0; k < state.n; ++k) {
    sum += state.q[k] *
           server_utility_per_type(state.theta[k], contract.items[k], params, state.l_max);
  }
  return state.m * sum;
}

double net_term(const ContractItem& item, double l_max) {
  return item.reward - (l_max * item.inv_latency - 1.0);
}

std::vector<bool> check_ir(const MarketState& state, const Contract& contract) {
  require_aligned(state, contract);
  std::vector<bool> ok(state.n);
  for (int k = 0; k < state.n; ++k) {
    ok[k] = user_utility(state.theta[k], contract.items[k], state.l_max) >=
            -kFeasibilityTolerance;
  }
  return ok;
}

std::vector<std::vector<bool>> check_ic(const MarketState& state,
                                        const Contract& contract) {
  require_aligned(state, contract);
  std::vector<std::vector<bool>> ok(state.n, std::vector<bool>(state.n, true));
  for (int k = 0; k < state.n; ++k) {
    const double own = user_utility(state.theta[k], contract.items[k], state.l_max);
    for (int j = 0; j < state.n; ++j) {
      if (j == k) continue;
      const double other = user_utility(state.theta[k], contract.items[j], state.l_max);
      ok[k][j] = own >= other - kFeasibilityTolerance;
    }
  }
  return ok;
}

UtilityReport evaluate(const MarketState& state, const Contract& contract,
                       const EconParams& params) {
  require_aligned(state, contract);
  UtilityReport report;
  report.user_utilities.resize(state.n);
  report.server_per_type.resize(state.n);
  for (int k = 0; k < state.n; ++k) {
    report.user_utilities[k] = user_utility(state.theta[k], contract.items[k], state.l_max);
    report.server_per_type[k] =
        server_utility_per_type(state.theta[k], contract.items[k], params, state.l_max);
  }
  report.expected_server = expected_server_utility(state, contract, params);
  report.ir_ok = check_ir(state, contract);
  report.ic_ok = check_ic(state, contract);
  report.feasible = std::all_of(report.ir_ok.begin(), report.ir_ok.end(),
                                [](bool b) { return b; });
  for (const auto& row : report.ic_ok) {
    for (bool b : row) report.feasible = report.feasible && b;
  }
  return report;
}

double constraint_violation(const MarketState& state, const Contract& contract) {
  require_aligned(state, contract);
  const auto shortfall = [](double gap) { return gap > kFeasibilityTolerance ? gap : 0.0; };
  double total = 0.0;
  for (int k = 0; k < state.n; ++k) {
    const double own = user_utility(state.theta[k], contract.items[k], state.l_max);
    total += shortfall(-own);
    for (int j = 0; j < state.n; ++j) {
      if (j == k) continue;
      const double other = user_utility(state.theta[k], contract.items[j], state.l_max);
      total += shortfall(other - own);
    }
  }
  return total;
}

Contract project_to_feasible(const MarketState& state, const Contract& contract) {
  require_aligned(state, contract);
  Contract out = contract;
  double best_net = 0.0;
  for (auto& item : out.items) {
    item.reward = std::max(item.reward, state.l_max * item.inv_latency - 1.0);
    best_net = std::max(best_net, net_term(item, state.l_max));
  }
  for (auto& item : out.items) {
    item.reward += best_net - net_term(item, state.l_max);
  }
  return out;
}

}  // namespace contractgen
