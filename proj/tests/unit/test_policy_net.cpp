#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"

#include "safeadapt/errors.hpp"
#include "safeadapt/ibp.hpp"
#include "safeadapt/policy_net.hpp"
#include "safeadapt/rng.hpp"

#include "oracles.hpp"

using namespace safeadapt;
using namespace safeadapt::nn;

namespace {

ParamVector random_net(Rng& rng, const MlpSpec& spec, double scale = 0.7) {
  ParamVector p(spec);
  for (double& v : p.values) v = rng.uniform(-scale, scale);
  return p;
}

std::vector<double> random_input(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.uniform(-1, 1);
  return x;
}

// Textbook dense forward pass, written without the library's kernels.
std::vector<double> oracle_forward(const ParamVector& p, const std::vector<double>& x) {
  std::vector<double> h = x;
  for (std::size_t l = 0; l < p.spec.num_layers(); ++l) {
    const auto w = p.weights(l);
    const auto b = p.bias(l);
    const std::size_t rows = p.layout[l].rows, cols = p.layout[l].cols;
    std::vector<double> z(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      long double s = b[r];
      for (std::size_t c = 0; c < cols; ++c) s += static_cast<long double>(w[r * cols + c]) * h[c];
      z[r] = static_cast<double>(s);
    }
    if (l + 1 < p.spec.num_layers()) {
      for (double& v : z) v = p.spec.activation == Activation::Relu ? std::max(v, 0.0) : std::tanh(v);
    }
    h = std::move(z);
  }
  return h;
}

}  // namespace

TEST_CASE("forward: trivial nets") {
  const MlpSpec spec{3, {3}, 3, Activation::Relu};
  ParamVector zero(spec);
  for (double v : forward(zero, std::vector<double>{1, 2, 3})) CHECK(v == 0.0);

  ParamVector id(spec);
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t i = 0; i < 3; ++i) id.weights(l)[i * 3 + i] = 1.0;
  }
  const auto z = forward(id, std::vector<double>{0, 0, 1});
  CHECK(z == std::vector<double>{0, 0, 1});

  CHECK_THROWS_AS(forward(id, std::vector<double>{1, 2}), DimensionError);
  CHECK_THROWS_AS((MlpSpec{3, {}, 3}.validate()), DimensionError);
  CHECK_THROWS_AS((MlpSpec{3, {0}, 3}.validate()), DimensionError);
}

TEST_CASE("forward matches a direct matrix oracle and is bitwise repeatable") {
  Rng rng(3);
  for (Activation act : {Activation::Relu, Activation::Tanh}) {
    for (int rep = 0; rep < 20; ++rep) {
      const MlpSpec spec{1 + rng.below(20), {1 + rng.below(40), 1 + rng.below(40)}, 4, act};
      const ParamVector p = random_net(rng, spec);
      const auto x = random_input(rng, spec.input_dim);
      const auto z = forward(p, x);
      const auto o = oracle_forward(p, x);
      for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(z[i] - o[i]) <= 1e-12);
      CHECK(forward(p, x) == z);
    }
  }
}

TEST_CASE("grad: trivial cases") {
  Rng rng(4);
  const MlpSpec spec{5, {6}, 4, Activation::Relu};
  const ParamVector p = random_net(rng, spec);
  const auto x = random_input(rng, 5);
  for (double g : grad(p, x, std::vector<double>(4, 0.0))) CHECK(g == 0.0);

  // Output layer of a one-hidden-layer net: d z_a / d W2[a,:] = h, d z_a / d b2[a] = 1.
  Trace t;
  forward_trace(p, x, t);
  const auto g = grad(p, x, std::vector<double>{0, 0, 1, 0});
  const auto w2 = p.layout[1];
  for (std::size_t c = 0; c < w2.cols; ++c) CHECK(g[w2.w_offset + 2 * w2.cols + c] == t.post[0][c]);
  CHECK(g[w2.b_offset + 2] == 1.0);
  CHECK(g[w2.b_offset + 1] == 0.0);
}

TEST_CASE("grad matches central finite differences on 20 random cases") {
  const auto r = testsupport::network_gradient_check(20, 2024);
  MESSAGE("max relative error " << r.max_rel << " over " << r.compared << " components");
  CHECK(r.compared > 0);
  CHECK(r.max_rel < 1e-5);
}

TEST_CASE("action_dist") {
  const auto u = action_dist(std::vector<double>{0, 0, 0, 0}, 1.0);
  for (double p : u.probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));

  const auto sharp = action_dist(std::vector<double>{1, 0}, 1000.0);
  CHECK(std::abs(sharp.probs[0] - 1.0) < 1e-6);
  CHECK(sharp.probs[1] < 1e-6);

  const std::vector<double> z{0.5, -0.5, 0, 0};
  const auto d = action_dist(z, 1.0);
  double s = 0.0;
  for (double v : z) s += std::exp(v);
  for (std::size_t a = 0; a < 4; ++a) CHECK(std::abs(d.probs[a] - std::exp(z[a]) / s) <= 1e-12);

  CHECK_THROWS_AS(action_dist(z, 0.0), InvalidArgument);
  CHECK_THROWS_AS(action_dist(z, -1.0), InvalidArgument);

  Rng rng(8);
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<double> big(4);
    for (double& v : big) v = rng.uniform(-500, 500);
    const auto e = action_dist(big, 1.0);
    double total = 0.0;
    for (double p : e.probs) total += p;
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
}

TEST_CASE("greedy_action ties go to the lowest index") {
  CHECK(greedy_action(std::vector<double>{0, 3, 1, 2}) == 1);
  CHECK(greedy_action(std::vector<double>{1, 1, 1, 1}) == 0);
  CHECK(greedy_action(std::vector<double>{-1, -1, 5, -1}) == 2);
}

TEST_CASE("tempered surrogate agrees with the hard rule at large inverse temperature") {
  Rng rng(12);
  int tested = 0;
  while (tested < 2000) {
    const std::size_t k = 2 + rng.below(5);
    std::vector<double> z(k);
    for (double& v : z) v = rng.uniform(-3, 3);
    std::vector<double> sorted = z;
    std::sort(sorted.rbegin(), sorted.rend());
    if (sorted[0] - sorted[1] < 0.01) continue;
    ActionSet safe;
    while (safe.empty() || safe == ActionSet::full(k)) safe = ActionSet(static_cast<std::uint32_t>(rng.below(1u << k)));
    const double m = static_cast<double>(safe.count());
    const bool surrogate_says_safe = ibp::safe_mass(z, safe, 1000.0) > m / (1.0 + m);
    CHECK(surrogate_says_safe == ibp::hard_spec(z, safe));
    ++tested;
  }
}

TEST_CASE("sample_action") {
  Rng rng(1);
  const auto degenerate = action_dist(std::vector<double>{0, -1e6, -1e6, -1e6}, 1.0);
  for (int i = 0; i < 1000; ++i) CHECK(sample_action(degenerate, rng) == 0);

  const auto uniform = action_dist(std::vector<double>{0, 0, 0, 0}, 1.0);
  std::vector<int> counts(4, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[sample_action(uniform, rng)]++;
  for (int c : counts) CHECK(std::abs(c / static_cast<double>(n) - 0.25) < 0.01);

  Rng a = Rng::stream(7, "x"), b = Rng::stream(7, "x");
  for (int i = 0; i < 100; ++i) CHECK(sample_action(uniform, a) == sample_action(uniform, b));
}

TEST_CASE("orthogonal initialisation") {
  Rng rng(9);
  const MlpSpec spec{6, {16, 16}, 4, Activation::Relu};
  const ParamVector p = init_params(spec, rng, 0.01);
  // Hidden layer 1: 16 x 16 square, gain sqrt(2): W W^T = 2 I.
  const auto w = p.weights(1);
  for (std::size_t i = 0; i < 16; ++i) {
    for (std::size_t j = 0; j < 16; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < 16; ++c) s += w[i * 16 + c] * w[j * 16 + c];
      CHECK(std::abs(s - (i == j ? 2.0 : 0.0)) < 1e-10);
    }
  }
  for (std::size_t l = 0; l < 3; ++l) {
    for (double b : p.bias(l)) CHECK(b == 0.0);
  }
  double out_max = 0.0;
  for (double v : p.weights(2)) out_max = std::max(out_max, std::abs(v));
  CHECK(out_max <= 0.01 + 1e-12);
}

TEST_CASE("checkpoint JSON round trip is bit exact") {
  Rng rng(10);
  const MlpSpec spec{7, {5, 3}, 4, Activation::Tanh};
  ParamVector p = random_net(rng, spec);
  p.values[0] = 0.1 + 0.2;  // not representable in short decimal
  p.values[1] = -1e-300;
  const ParamVector back = params_from_json(nlohmann::json::parse(to_json(p).dump()));
  CHECK(back.spec == p.spec);
  CHECK(back.values == p.values);
  auto bad = to_json(p);
  bad["values"].erase(bad["values"].begin());
  CHECK_THROWS_AS(params_from_json(bad), ConfigError);
}
