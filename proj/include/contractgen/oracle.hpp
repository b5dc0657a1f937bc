#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "contractgen/contract.hpp"

namespace contractgen {

class InfeasibleGridError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when the per-type reduction disagrees with the joint scan.
class SeparabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Latency samples are log-spaced, reward samples linear. Ranges default to
// [l_min, l_max] and [0, r_max].
struct GridSpec {
  int latency_points = 2000;
  int reward_points = 2000;
  std::optional<double> latency_lo, latency_hi;
  std::optional<double> reward_lo, reward_hi;

  void validate() const;
};

enum class OracleMethod { closed_form, grid, ascent };

std::string to_string(OracleMethod method);

struct OracleSolution {
  Contract contract;
  double expected_server = 0.0;
  OracleMethod method = OracleMethod::closed_form;
  bool clamped = false;  // closed form: the stationary latency hit a bound
  int iterations = 0;    // ascent: steps taken
};

// Stationary point of the IR-binding per-type objective, clamped to the
// feasible latency interval. Identical item for every type.
OracleSolution closed_form_contract(const MarketState& state, const EconParams& params);

// Exhaustive per-type scan. For n == 2 a coarse joint scan over item pairs is
// also run and must agree with the per-type reduction.
OracleSolution grid_search_contract(const MarketState& state, const EconParams& params,
                                    const GridSpec& grid);

// Naive joint scan over all item pairs (n == 2 only). Returns the best
// feasible contract found, with method == grid.
OracleSolution joint_grid_scan(const MarketState& state, const EconParams& params,
                               const GridSpec& grid);

// Projected gradient ascent on each type's share of U_E over (L, R) with an
// Armijo backtracking step. The feasible set per type is the latency/reward
// box intersected with the IR region R >= l_max / L - 1.
OracleSolution projected_ascent(const MarketState& state, const EconParams& params,
                                const Contract& init, int steps, double lr);

// Euclidean projection of (latency, reward) onto the per-type feasible set.
// Exposed for testing.
struct LatencyReward {
  double latency;
  double reward;
};
LatencyReward project_item(LatencyReward point, const EconParams& params, double l_max);

}  // namespace contractgen
