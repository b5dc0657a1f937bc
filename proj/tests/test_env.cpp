#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "contractgen/env.hpp"

using namespace contractgen;

TEST_CASE("Dirichlet(1,1) gives a uniform first share") {
  SamplerConfig cfg;
  cfg.seed = 7;
  const int count = 10000;
  std::vector<double> q1;
  q1.reserve(count);
  for (int i = 0; i < count; ++i) q1.push_back(sample_state(cfg, i).q[0]);
  std::sort(q1.begin(), q1.end());
  double d = 0.0;
  for (int i = 0; i < count; ++i) {
    d = std::max({d, (i + 1.0) / count - q1[i], q1[i] - static_cast<double>(i) / count});
  }
  // Asymptotic Kolmogorov-Smirnov critical value at p = 0.01.
  CHECK(d < 1.628 / std::sqrt(static_cast<double>(count)));
}

TEST_CASE("sampling is deterministic per seed and index") {
  SamplerConfig cfg;
  cfg.seed = 42;
  const MarketState a = sample_state(cfg, 17);
  const MarketState b = sample_state(cfg, 17);
  CHECK(a.q == b.q);
  CHECK(a.theta == b.theta);
  const MarketState c = sample_state(cfg, 18);
  CHECK(a.theta != c.theta);

  StateSampler sampler(cfg, 17);
  CHECK(sampler.next().theta == a.theta);
  REQUIRE(sampler.log().size() == 1);
  CHECK(sampler.log()[0] == std::pair<std::uint64_t, std::uint64_t>{42, 17});
  CHECK(sampler.next_index() == 18);
}

TEST_CASE("sampled states satisfy the state invariants") {
  SamplerConfig cfg;
  cfg.seed = 3;
  for (int i = 0; i < 2000; ++i) {
    const MarketState s = sample_state(cfg, i);
    CHECK_NOTHROW(s.validate());
    CHECK(s.theta[0] > 10.0);
    CHECK(s.theta[0] < 100.0);
    CHECK(s.theta[1] > 100.0);
    CHECK(s.theta[1] < 200.0);
    for (double f : encode_state(s, cfg)) {
      CHECK(f >= 0.0);
      CHECK(f <= 1.0001);
    }
  }
}

TEST_CASE("eval set is independent of the training stream") {
  SamplerConfig cfg;
  cfg.seed = 5;
  const auto eval = sample_eval_set(cfg, 10);
  REQUIRE(eval.size() == 10);
  CHECK(eval[0].theta != sample_state(cfg, 0).theta);
  CHECK(sample_eval_set(cfg, 10)[9].q == eval[9].q);
}

TEST_CASE("state encoding") {
  SamplerConfig cfg;
  MarketState s;
  s.n = 2;
  s.q = {0.3, 0.7};
  s.theta = {100.0, 200.0};
  CHECK(encode_state(s, cfg) == std::vector<double>{1.0, 1.0, 0.3, 0.7});
  s.theta = {55.0, 150.0};
  const auto f = encode_state(s, cfg);
  CHECK(f[0] == doctest::Approx(0.55));
  CHECK(f[1] == doctest::Approx(0.75));
}

TEST_CASE("action decoding") {
  MarketState s;
  s.n = 2;
  s.q = {0.5, 0.5};
  s.theta = {50.0, 150.0};
  const EconParams p;

  const std::vector<double> low(4, -1.0), high(4, 1.0);
  for (const auto& item : decode_action(low, s, p).items) {
    CHECK(item.latency() == doctest::Approx(150.0));
    CHECK(item.reward == 0.0);
  }
  for (const auto& item : decode_action(high, s, p).items) {
    CHECK(item.latency() == doctest::Approx(1.0));
    CHECK(item.reward == doctest::Approx(50.0));
  }
  const std::vector<double> mid{0.0, -1.0, 0.0, -1.0};
  CHECK(decode_action(mid, s, p).items[0].inv_latency == doctest::Approx(0.50333).epsilon(1e-5));

  // Monotone per coordinate.
  double prev = -1.0;
  for (double raw = -1.0; raw <= 1.0; raw += 0.05) {
    const std::vector<double> a{raw, raw, raw, raw};
    const Contract c = decode_action(a, s, p);
    CHECK(c.items[0].inv_latency > prev);
    prev = c.items[0].inv_latency;
  }

  const ActionVector clamped = clamp_action(std::vector<double>{-3.0, 0.2, 1.5, -1.0});
  CHECK(clamped.raw == std::vector<double>{-1.0, 0.2, 1.0, -1.0});
}

TEST_CASE("training reward modes") {
  MarketState s;
  s.n = 2;
  s.q = {0.4, 0.6};
  s.theta = {55.0, 150.0};
  const EconParams p;
  RewardConfig pen;
  RewardConfig proj;
  proj.mode = RewardMode::project;

  SUBCASE("feasible actions score their utility in both modes") {
    const std::vector<double> corner(4, -1.0);
    const double u = evaluate(s, decode_action(corner, s, p), p).expected_server;
    CHECK(reward(s, corner, p, pen) == u);
    CHECK(reward(s, corner, p, proj) == u);
  }

  SUBCASE("unpaid short latency is penalized per type") {
    // L = 75, R = 0: each type falls short by theta * (150 / 75 - 1).
    const double raw_inv = 2.0 * (1.0 / 75.0 - 1.0 / 150.0) / (1.0 - 1.0 / 150.0) - 1.0;
    const std::vector<double> a{raw_inv, -1.0, raw_inv, -1.0};
    const Contract c = decode_action(a, s, p);
    const double u = expected_server_utility(s, c, p);
    const double expected = u - 1000.0 * (55.0 + 150.0);
    CHECK(reward(s, a, p, pen) == doctest::Approx(expected).epsilon(1e-10));

    const double projected = reward(s, a, p, proj);
    CHECK(projected == doctest::Approx(u - 1.0).epsilon(1e-10));
    CHECK(projected >= reward(s, a, p, pen));
  }

  SUBCASE("project mode always yields a feasible contract") {
    SamplerConfig cfg;
    cfg.seed = 11;
    Rng rng = make_rng(11, 0);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int i = 0; i < 300; ++i) {
      const MarketState st = sample_state(cfg, i);
      const std::vector<double> a{unit(rng), unit(rng), unit(rng), unit(rng)};
      const Contract c = project_to_feasible(st, decode_action(a, st, p));
      CHECK(evaluate(st, c, p).feasible);
      CHECK(reward(st, a, p, proj) == doctest::Approx(evaluate(st, c, p).expected_server));
      CHECK(reward(st, a, p, pen) <= reward(st, a, p, proj) + 1e-9);
    }
  }
}

TEST_CASE("configuration validation") {
  SamplerConfig cfg;
  cfg.theta_ranges[0] = {50.0, 50.0};
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg = SamplerConfig{};
  cfg.dirichlet_alpha = {1.0, 0.0};
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  RewardConfig r;
  r.penalty_weight = -1.0;
  CHECK_THROWS_AS(r.validate(), DomainError);
}
