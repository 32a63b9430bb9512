#include <cmath>
#include <vector>

#include "doctest.h"

#include "safeadapt/envs.hpp"
#include "safeadapt/errors.hpp"
#include "safeadapt/rashomon.hpp"

#include "oracles.hpp"

using namespace safeadapt;
using namespace safeadapt::rashomon;
using testsupport::margin_actor;
using testsupport::ToyProblem;

namespace {

envs::SafetyDataset with_sizes(const std::vector<unsigned>& masks) {
  envs::SafetyDataset d;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    envs::SafetyEntry e;
    e.state.cell = static_cast<int>(i);
    e.encoding = {1.0};
    e.safe_mask = ActionSet(masks[i]);
    d.entries.push_back(e);
  }
  return d;
}

RashomonConfig quick_config() {
  RashomonConfig c;
  c.n_iters = 1500;
  return c;
}

}  // namespace

TEST_CASE("delta_star") {
  CHECK(delta_star(with_sizes({0b0001, 0b0010, 0b1000})) == 0.5);
  CHECK(delta_star(with_sizes({0b0111, 0b0001})) == 0.75);
  CHECK(delta_star(with_sizes({0b0001, 0b0011})) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(delta_star(with_sizes({0b0001}), 0.01) == doctest::Approx(0.51).epsilon(1e-15));
  CHECK_THROWS_AS(delta_star(envs::SafetyDataset{}), InvalidArgument);
  for (int m = 1; m < 8; ++m) CHECK(m / (1.0 + m) < (m + 1) / (2.0 + m));
}

TEST_CASE("inverse temperature grid") {
  const auto g = beta_grid(10, 1000, 32);
  REQUIRE(g.size() == 32);
  CHECK(g.front() == 10.0);
  CHECK(g.back() == doctest::Approx(1000.0).epsilon(1e-14));
  for (std::size_t i = 2; i < g.size(); ++i) CHECK(g[i] / g[i - 1] == doctest::Approx(g[1] / g[0]).epsilon(1e-12));
}

TEST_CASE("inverse temperature search") {
  const envs::Env env = envs::make_env("standard_4x4", 1);
  const auto d = envs::build_safety_dataset(env);
  const RashomonConfig cfg;
  const double delta = delta_star(d);

  const auto ok = search_inverse_temperature(margin_actor(env, d, 1.0), d, cfg, delta);
  CHECK(ok.found);
  CHECK(ok.beta <= 1000.0);
  // The returned beta is the smallest qualifying grid point.
  const auto grid = beta_grid(cfg.beta_min, cfg.beta_max, cfg.beta_grid_points);
  const auto it = std::find(grid.begin(), grid.end(), ok.beta);
  REQUIRE(it != grid.end());
  if (it != grid.begin()) {
    const nn::ParamVector actor = margin_actor(env, d, 1.0);
    bool all = true;
    for (const auto& e : d.entries) {
      all = all && ibp::safe_mass(nn::forward(actor, e.encoding), e.safe_mask, *(it - 1)) > delta;
    }
    CHECK_FALSE(all);
  }

  const auto big = search_inverse_temperature(margin_actor(env, d, 10.0), d, cfg, delta);
  CHECK(big.found);
  CHECK(big.beta == 10.0);

  const int bad_cell = d.entries[2].state.cell;
  const auto bad = search_inverse_temperature(margin_actor(env, d, 1.0, bad_cell), d, cfg, delta);
  CHECK_FALSE(bad.found);
  CHECK(d.entries[bad.failing_index].state.cell == bad_cell);
}

TEST_CASE("solver reaches the closed-form optimum of the one-parameter problem") {
  ToyProblem toy(2.0, 0.6);
  const RashomonConfig cfg;
  const auto sol = solve_max_lid(toy, 0.6, cfg);
  REQUIRE(sol.has_value());
  const double expected = 2.0 - std::log(1.5);
  MESSAGE("alpha " << sol->alpha[0] << ", expected " << expected);
  CHECK(std::abs(sol->alpha[0] - expected) < 1e-2);
  CHECK(sol->global_lb > 0.6);
}

TEST_CASE("solver returns nothing when no checkpoint is feasible") {
  ToyProblem toy(-1.0, 0.6);
  RashomonConfig cfg = quick_config();
  CHECK_FALSE(solve_max_lid(toy, 0.6, cfg).has_value());
}

TEST_CASE("max_lid on a tabular Frozen Lake policy") {
  const envs::Env env = envs::make_env("standard_4x4", 1);
  const auto d = envs::build_safety_dataset(env);
  const nn::ParamVector center = margin_actor(env, d, 2.0);
  const RashomonConfig cfg = quick_config();
  const auto res = max_lid(center, d, cfg);
  const Certificate& c = res.cert;
  CHECK(c.global_lb > c.delta_star);
  CHECK(c.hard_cert_rate == 1.0);
  CHECK(c.delta_star == 0.75);

  // Fresh re-verification with box samples.
  Rng rng(1);
  const auto rep = verify_certificate(c, d, 1000, rng);
  CHECK(rep.passed);
  CHECK(rep.sample_violations == 0);
  CHECK(rep.samples == 1000);

  // Shrinking the box keeps it feasible.
  for (double s : {0.9, 0.5, 0.1, 0.0}) {
    Certificate smaller = c;
    for (double& a : smaller.box.alpha) a *= s;
    Rng r2(2);
    CHECK(verify_certificate(smaller, d, 0, r2).passed);
  }

  // Same inputs, same certificate.
  const auto again = max_lid(center, d, cfg);
  CHECK(again.cert.box.alpha == c.box.alpha);
  CHECK(again.cert.global_lb == c.global_lb);

  // Inflated boxes eventually fail and name a state.
  Certificate inflated = c;
  for (double& a : inflated.box.alpha) a *= 50.0;
  Rng r3(3);
  const auto bad = verify_certificate(inflated, d, 100, r3);
  CHECK_FALSE(bad.passed);
  CHECK_FALSE(bad.failing_state.empty());

  // A threshold below the sound one is rejected outright.
  Certificate lax = c;
  lax.delta_star = 0.5;
  Rng r4(4);
  CHECK_FALSE(verify_certificate(lax, d, 0, r4).passed);
}

TEST_CASE("max_lid refuses an unsafe centre and names the state") {
  const envs::Env env = envs::make_env("standard_4x4", 1);
  const auto d = envs::build_safety_dataset(env);
  const int bad_cell = d.entries[1].state.cell;
  const auto describe = [&](std::size_t i) { return env.describe(d.entries[i].state); };
  try {
    max_lid(margin_actor(env, d, 2.0, bad_cell), d, quick_config(), describe);
    FAIL("expected a refusal");
  } catch (const CertificationRefused& e) {
    CHECK(e.failing_state() == env.describe(d.entries[1].state));
  }
}

TEST_CASE("zero box around a safe policy verifies") {
  const envs::Env env = envs::make_env("standard_4x4", 1);
  const auto d = envs::build_safety_dataset(env);
  Certificate c;
  c.box = ibp::Orthotope(margin_actor(env, d, 5.0));
  c.beta = 10.0;
  c.delta_star = delta_star(d);
  Rng rng(5);
  CHECK(verify_certificate(c, d, 10, rng).passed);
}

TEST_CASE("certificate JSON round trip") {
  const envs::Env env = envs::make_env("standard_4x4", 1);
  const auto d = envs::build_safety_dataset(env);
  const nn::ParamVector center = margin_actor(env, d, 2.0);
  auto res = max_lid(center, d, quick_config());
  res.cert.center_checkpoint = "actor.json";
  const auto j = nlohmann::json::parse(to_json(res.cert).dump());
  for (const char* key : {"beta", "delta_star", "alpha", "center_checkpoint", "global_lb", "hard_cert_rate",
                          "iteration", "per_state"}) {
    CHECK(j.contains(key));
  }
  const Certificate back = certificate_from_json(j, center);
  CHECK(back.box.alpha == res.cert.box.alpha);
  CHECK(back.beta == res.cert.beta);
  CHECK(back.delta_star == res.cert.delta_star);
  CHECK(back.global_lb == res.cert.global_lb);
  CHECK(back.center_checkpoint == "actor.json");
  CHECK(back.iteration == res.cert.iteration);
}

TEST_CASE("config validation and JSON") {
  RashomonConfig c;
  c.n_iters = 0;
  CHECK_THROWS(c.validate());
  c = RashomonConfig{};
  c.beta_min = 0;
  CHECK_THROWS(c.validate());
  c = RashomonConfig{};
  c.hard_threshold = 1.5;
  CHECK_THROWS(c.validate());
  c = RashomonConfig{};
  c.n_iters = 20000;
  c.primal_lr = 0.05;
  const auto back = rashomon_config_from_json(to_json(c));
  CHECK(back.n_iters == 20000);
  CHECK(back.primal_lr == 0.05);
}
