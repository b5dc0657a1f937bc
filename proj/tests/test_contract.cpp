#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "contractgen/contract.hpp"

using namespace contractgen;

namespace {

ContractItem item_from_latency(double latency, double reward) {
  return ContractItem{1.0 / latency, reward};
}

MarketState two_type_state(double q1, double theta1, double theta2, int m = 1) {
  MarketState s;
  s.m = m;
  s.n = 2;
  s.l_max = 150.0;
  s.q = {q1, 1.0 - q1};
  s.theta = {theta1, theta2};
  return s;
}

}  // namespace

TEST_CASE("user utility matches benefit minus cost") {
  CHECK(user_utility(100.0, item_from_latency(50.0, 2.0), 150.0) == doctest::Approx(0.0));
  CHECK(user_utility(37.5, item_from_latency(150.0, 0.0), 150.0) == doctest::Approx(0.0));
  CHECK(user_utility(20.0, item_from_latency(75.0, 3.0), 150.0) == doctest::Approx(40.0));
}

TEST_CASE("non-finite inputs raise a domain error") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(user_utility(nan, item_from_latency(50.0, 1.0), 150.0), DomainError);
  CHECK_THROWS_AS(user_utility(10.0, ContractItem{0.02, nan}, 150.0), DomainError);
  CHECK_THROWS_AS(server_utility_per_type(10.0, ContractItem{nan, 1.0}, EconParams{}, 150.0),
                  DomainError);
}

TEST_CASE("server utility per type") {
  const EconParams p;
  CHECK(server_utility_per_type(100.0, item_from_latency(50.0, 2.0), p, 150.0) ==
        doctest::Approx(1494.6666666667).epsilon(1e-10));
  CHECK(server_utility_per_type(1e-12, item_from_latency(150.0, 0.0), p, 150.0) ==
        doctest::Approx(-p.a2));
  CHECK(server_utility_per_type(50.0, item_from_latency(150.0, 0.0), p, 150.0) ==
        doctest::Approx(740.0));
}

TEST_CASE("expected server utility") {
  const EconParams p;
  const ContractItem item = item_from_latency(47.4342, 2.16228);
  const Contract c{{item, item}};

  MarketState s = two_type_state(0.5, 50.0, 150.0);
  CHECK(std::abs(expected_server_utility(s, c, p) - 1494.6754) < 1e-3);

  MarketState degenerate = two_type_state(1.0, 50.0, 150.0);
  CHECK(expected_server_utility(degenerate, c, p) ==
        server_utility_per_type(50.0, item, p, 150.0));

  MarketState doubled = two_type_state(0.5, 50.0, 150.0, 2);
  CHECK(expected_server_utility(doubled, c, p) ==
        doctest::Approx(2.0 * expected_server_utility(s, c, p)));

  CHECK_THROWS_AS(expected_server_utility(s, Contract{{item}}, p), ShapeError);
}

TEST_CASE("IR checks") {
  MarketState s = two_type_state(0.5, 50.0, 150.0);
  // Binding: R = l_max / L - 1.
  const ContractItem binding = item_from_latency(60.0, 150.0 / 60.0 - 1.0);
  const ContractItem unpaid = item_from_latency(60.0, 0.0);
  const ContractItem slack = item_from_latency(150.0, 5.0);
  const auto ir = check_ir(s, Contract{{binding, unpaid}});
  CHECK(ir[0]);
  CHECK_FALSE(ir[1]);
  CHECK(std::abs(user_utility(50.0, binding, 150.0)) < 1e-9);
  CHECK(check_ir(s, Contract{{slack, slack}})[0]);
  CHECK(user_utility(50.0, slack, 150.0) == doctest::Approx(250.0));
}

TEST_CASE("IC checks") {
  MarketState s = two_type_state(0.5, 50.0, 150.0);
  const ContractItem same = item_from_latency(60.0, 3.0);
  for (const auto& row : check_ic(s, Contract{{same, same}})) {
    for (bool b : row) CHECK(b);
  }

  // Net terms 0 and 1: both types prefer the second item.
  const ContractItem net0 = item_from_latency(75.0, 1.0);
  const ContractItem net1 = item_from_latency(75.0, 2.0);
  const auto ic = check_ic(s, Contract{{net0, net1}});
  CHECK_FALSE(ic[0][1]);
  CHECK(ic[1][0]);
  CHECK(ic[0][0]);

  MarketState single;
  single.n = 1;
  single.q = {1.0};
  single.theta = {42.0};
  const auto one = check_ic(single, Contract{{net0}});
  REQUIRE(one.size() == 1);
  CHECK(one[0][0]);
}

TEST_CASE("evaluate aggregates the checks") {
  const EconParams p;
  MarketState s = two_type_state(0.3, 50.0, 150.0);
  const ContractItem item = item_from_latency(60.0, 1.5);
  const UtilityReport r = evaluate(s, Contract{{item, item}}, p);
  CHECK(r.feasible);
  CHECK(r.user_utilities[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.expected_server == doctest::Approx(expected_server_utility(s, Contract{{item, item}}, p)));

  const UtilityReport bad = evaluate(s, Contract{{item, item_from_latency(60.0, 0.0)}}, p);
  CHECK_FALSE(bad.feasible);
  CHECK_FALSE(bad.ir_ok[1]);
}

TEST_CASE("n = 1 expected utility equals the handwritten sum") {
  const EconParams p{15.0, 10.0, 1.5, 2.0, 50.0, 1.0};
  MarketState s;
  s.n = 1;
  s.m = 3;
  s.q = {1.0};
  s.theta = {37.0};
  const ContractItem item = item_from_latency(80.0, 4.0);
  const double by_hand =
      3.0 * (15.0 * std::pow(37.0, 1.5) - 10.0 * std::pow(80.0 / 150.0, 2.0) - 4.0);
  CHECK(std::abs(evaluate(s, Contract{{item}}, p).expected_server - by_hand) < 1e-9);
}

TEST_CASE("utility properties on random contracts") {
  std::mt19937_64 rng(20240);
  std::uniform_real_distribution<double> theta_dist(1.0, 300.0);
  std::uniform_real_distribution<double> lat_dist(1.0, 150.0);
  std::uniform_real_distribution<double> rew_dist(0.0, 50.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const EconParams p;

  for (int trial = 0; trial < 500; ++trial) {
    const ContractItem item = item_from_latency(lat_dist(rng), rew_dist(rng));
    const double theta = theta_dist(rng);
    // Scale factorization: U = theta * net.
    CHECK(user_utility(theta, item, 150.0) ==
          doctest::Approx(theta * net_term(item, 150.0)).epsilon(1e-12));

    double t1 = theta_dist(rng), t2 = theta_dist(rng);
    if (t1 > t2) std::swap(t1, t2);
    MarketState s = two_type_state(unit(rng), t1, t2);
    Contract c{{item_from_latency(lat_dist(rng), rew_dist(rng)),
                item_from_latency(lat_dist(rng), rew_dist(rng))}};
    if (trial % 3 == 0) c.items[1].reward = c.items[0].reward + 150.0 * (c.items[1].inv_latency - c.items[0].inv_latency);

    // IC passes iff every net term is within tolerance of the largest.
    const auto ic = check_ic(s, c);
    const double n0 = net_term(c.items[0], 150.0), n1 = net_term(c.items[1], 150.0);
    const double best = std::max(n0, n1);
    const bool closed_form = t1 * n0 >= t1 * best - kFeasibilityTolerance &&
                             t2 * n1 >= t2 * best - kFeasibilityTolerance;
    CHECK((ic[0][1] && ic[1][0]) == closed_form);

    // Strictly decreasing in each reward with positive probability.
    const double base = expected_server_utility(s, c, p);
    Contract bumped = c;
    bumped.items[0].reward += 1e-3;
    if (s.q[0] > 0) CHECK(expected_server_utility(s, bumped, p) < base);

    // Linear in m and affine in q.
    MarketState tripled = s;
    tripled.m = 3;
    CHECK(expected_server_utility(tripled, c, p) == doctest::Approx(3.0 * base));
    MarketState left = s, right = s;
    left.q = {1.0, 0.0};
    right.q = {0.0, 1.0};
    const double mix = s.q[0] * expected_server_utility(left, c, p) +
                       s.q[1] * expected_server_utility(right, c, p);
    CHECK(base == doctest::Approx(mix).epsilon(1e-12));

    // Projection always restores feasibility.
    CHECK(evaluate(s, project_to_feasible(s, c), p).feasible);
  }
}

TEST_CASE("constraint violation is zero exactly on feasible contracts") {
  MarketState s = two_type_state(0.5, 20.0, 120.0);
  const ContractItem item = item_from_latency(150.0, 1.0);
  CHECK(constraint_violation(s, Contract{{item, item}}) == 0.0);
  // R = 0 at L = 50: each type falls short by theta * 2.
  const ContractItem unpaid = item_from_latency(50.0, 0.0);
  CHECK(constraint_violation(s, Contract{{unpaid, unpaid}}) == doctest::Approx(2.0 * 20 + 2.0 * 120));
}

TEST_CASE("state validation") {
  MarketState s = two_type_state(0.5, 50.0, 150.0);
  CHECK_NOTHROW(s.validate());
  s.theta = {150.0, 50.0};
  CHECK_THROWS_AS(s.validate(), DomainError);
  s = two_type_state(0.5, 50.0, 150.0);
  s.q = {0.5, 0.6};
  CHECK_THROWS_AS(s.validate(), DomainError);
  EconParams p;
  p.b2 = 0.5;
  CHECK_THROWS_AS(p.validate(), DomainError);
}
