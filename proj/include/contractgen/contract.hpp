#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace contractgen {

// Absolute slack used by every IR/IC check.
inline constexpr double kFeasibilityTolerance = 1e-6;

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Revenue/cost coefficients of the edge server plus the action box bounds.
struct EconParams {
  double a1 = 15.0;    // revenue-quality coefficient
  double a2 = 10.0;    // revenue-latency coefficient
  double b1 = 1.0;     // quality exponent
  double b2 = 1.0;     // latency exponent
  double r_max = 50.0; // upper bound on a per-type reward
  double l_min = 1.0;  // lower bound on latency

  void validate() const;
};

// One sampled market: m users split into n ascending types.
struct MarketState {
  int m = 1;
  int n = 0;
  double l_max = 150.0;
  std::vector<double> q;
  std::vector<double> theta;

  void validate() const;
};

struct ContractItem {
  double inv_latency = 0.0;
  double reward = 0.0;

  double latency() const { return 1.0 / inv_latency; }
};

// One item per type, index-aligned with MarketState::theta.
struct Contract {
  std::vector<ContractItem> items;
};

struct UtilityReport {
  std::vector<double> user_utilities;
  std::vector<double> server_per_type;
  double expected_server = 0.0;
  std::vector<bool> ir_ok;
  std::vector<std::vector<bool>> ic_ok;
  bool feasible = false;
};

// theta * R - theta * (l_max / L - 1).
double user_utility(double theta, const ContractItem& item, double l_max);

// a1 * theta^b1 - a2 * (L / l_max)^b2 - R.
double server_utility_per_type(double theta, const ContractItem& item,
                               const EconParams& params, double l_max);

// m * sum_n q_n * server_utility_per_type(theta_n, item_n).
double expected_server_utility(const MarketState& state,
                               const Contract& contract,
                               const EconParams& params);

std::vector<bool> check_ir(const MarketState& state, const Contract& contract);

// Entry (k, j): a type-k user does not gain by taking item j.
std::vector<std::vector<bool>> check_ic(const MarketState& state,
                                        const Contract& contract);

UtilityReport evaluate(const MarketState& state, const Contract& contract,
                       const EconParams& params);

// R - (l_max / L - 1). User utility factors as theta * net_term.
double net_term(const ContractItem& item, double l_max);

// Sum of IR and IC shortfalls in utility units. Shortfalls within
// kFeasibilityTolerance count as zero, so feasible contracts score exactly 0.
double constraint_violation(const MarketState& state, const Contract& contract);

// Raises every reward onto the IR boundary, then lifts all net terms to the
// largest one so that IC holds. Rewards may end above r_max.
Contract project_to_feasible(const MarketState& state, const Contract& contract);

}  // namespace contractgen
