#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "sbcq/lyapunov/pair.hpp"
#include "support/fd.hpp"

using namespace sbcq;
using namespace sbcq::lyapunov;
using diffcore::DenseLayer;
using diffcore::DenseNet;
using diffcore::IcnnLayer;
using diffcore::IcnnNet;
using doctest::Approx;

namespace {

// g(s) = slope·s[axis] + offset − l/2 while slope·s[axis] + offset ≥ l: one hidden unit in its linear branch.
IcnnNet linear_icnn(std::size_t dim, std::size_t axis, double slope, double offset, double l) {
  IcnnLayer hidden{Matrix(1, dim), Matrix(), Vector{offset}};
  hidden.w(0, axis) = slope;
  IcnnLayer out{Matrix(1, dim), Matrix(1, 1, 1.0), Vector{0.0}};
  return IcnnNet({hidden, out}, l);
}

// f̄(s) = c for every s.
DenseNet constant_dynamics(const Vector& c) {
  const std::size_t d = c.size();
  return DenseNet({DenseLayer{Matrix(d, d), c, diffcore::Activation::identity()}});
}

LyapunovConfig tiny_eps(double alpha = 0.1) {
  LyapunovConfig c;
  c.alpha = alpha;
  c.eps_pd = 1e-300;  // keeps V positive definite without perturbing hand-computed values
  return c;
}

Matrix random_states(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
  Matrix m(n, d);
  for (double& v : m.values()) v = scale * rng.uniform(-1.0, 1.0);
  return m;
}

LyapunovConfig small_config(Rng& rng) {
  LyapunovConfig c;
  c.dynamics_hidden = {4 + rng.index(6)};
  c.icnn_hidden = {3 + rng.index(5), 3 + rng.index(5)};
  return c;
}

}  // namespace

TEST_CASE("V: zero at the origin, positive elsewhere, bounded below by the quadratic") {
  Rng rng(1);
  for (int net = 0; net < 10; ++net) {
    const LyapunovPair pair(6, {}, rng);
    CHECK(pair.value(Vector(6, 0.0)) == 0.0);
    const Matrix s = random_states(1000, 6, rng, 3.0);
    const Vector v = pair.values(s);
    for (std::size_t r = 0; r < s.rows(); ++r) {
      const auto row = s.row(r);
      const double q = std::inner_product(row.begin(), row.end(), row.begin(), 0.0);
      REQUIRE(v[r] > 0.0);
      REQUIRE(v[r] >= 1e-3 * q);
    }
  }
}

TEST_CASE("V: hand-evaluated value 0.254") {
  LyapunovConfig cfg;  // l = 0.1, eps_pd = 1e-3
  const LyapunovPair pair(constant_dynamics({0.0, 0.0}), linear_icnn(2, 0, 0.15, 1.0, cfg.width), cfg);
  CHECK(pair.value(Vector{2.0, 0.0}) == Approx(0.254).epsilon(1e-14));
}

TEST_CASE("lie derivative: examples and finite differences") {
  const LyapunovPair flat(constant_dynamics({0.0, 0.0}), linear_icnn(2, 1, 1.0, 1.0, 0.1), tiny_eps());
  const Vector s{0.0, 2.0};
  CHECK(flat.gradient(s) == Vector{0.0, 1.0});
  CHECK(flat.lie_derivative(s, Vector{5.0, -2.0}) == -2.0);
  CHECK(flat.lie_derivative(s, Vector{0.0, 0.0}) == 0.0);

  Rng rng(3);
  double worst = 0.0;
  for (int config = 0; config < 20; ++config) {
    const LyapunovPair pair(4, small_config(rng), rng);
    Vector x(4), f(4);
    for (double& v : x) v = rng.uniform(-1, 1);
    for (double& v : f) v = rng.uniform(-1, 1);
    double t = 0.0;
    const double fd = testing::central_difference(
        [&] {
          Vector p(4);
          for (int k = 0; k < 4; ++k) p[k] = x[k] + t * f[k];
          return pair.value(p);
        },
        t);
    worst = std::max(worst, testing::relative_error(fd, pair.lie_derivative(x, f)));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("stable dynamics: hand examples") {
  SUBCASE("inactive projection") {
    const LyapunovPair pair(constant_dynamics({1.0, -2.0}), linear_icnn(2, 1, 1.0, 1.0, 0.1), tiny_eps(0.1));
    const Vector s{0.0, 1.05};
    CHECK(pair.value(s) == Approx(1.0).epsilon(1e-14));
    bool projected = true;
    CHECK(pair.stable_dynamics(s, &projected) == Vector{1.0, -2.0});
    CHECK_FALSE(projected);
  }
  SUBCASE("active projection lands on the l/2 slack") {
    const LyapunovPair pair(constant_dynamics({1.0, 0.0}), linear_icnn(2, 0, 1.0, 1.0, 0.1), tiny_eps(1.0));
    const Vector s{1.05, 0.0};
    CHECK(pair.value(s) == Approx(1.0).epsilon(1e-14));
    bool projected = false;
    const Vector f = pair.stable_dynamics(s, &projected);
    CHECK(projected);
    CHECK(f[0] == Approx(-0.95).epsilon(1e-13));
    CHECK(f[1] == 0.0);
    CHECK(pair.lie_derivative(s, f) == Approx(-1.0 * pair.value(s) + 0.05).epsilon(1e-13));
  }
  SUBCASE("origin leaves the nominal dynamics untouched") {
    Rng rng(4);
    for (int k = 0; k < 10; ++k) {
      const LyapunovPair pair(3, small_config(rng), rng);
      const Vector zero(3, 0.0);
      CHECK(pair.value(zero) == 0.0);
      CHECK(pair.stable_dynamics(zero) == pair.nominal(zero));
    }
  }
}

TEST_CASE("stable dynamics: decrease bound with smoothed slack") {
  Rng rng(5);
  double worst = -INFINITY;
  for (int net = 0; net < 100; ++net) {
    LyapunovConfig cfg;
    cfg.dynamics_hidden = {16};
    cfg.icnn_hidden = {8, 8};
    const LyapunovPair pair(4, cfg, rng);
    const Matrix s = random_states(100, 4, rng, 2.0);
    const Matrix f = pair.stable_dynamics(s);
    const Matrix grad = pair.gradients(s);
    const Vector v = pair.values(s);
    for (std::size_t r = 0; r < s.rows(); ++r) {
      const auto g = grad.row(r), fr = f.row(r);
      const double lie = std::inner_product(g.begin(), g.end(), fr.begin(), 0.0);
      worst = std::max(worst, lie + cfg.alpha * v[r] - cfg.width / 2.0);
    }
  }
  MESSAGE("max of grad·f + alpha·V − l/2: " << worst);
  CHECK(worst <= 1e-9);
}

TEST_CASE("risk: hand examples") {
  SUBCASE("all hinges inactive") {
    const LyapunovPair pair(constant_dynamics({-10.0, 0.0}), linear_icnn(2, 0, 1.0, 1.0, 0.1), tiny_eps());
    Matrix s(20, 2);
    for (std::size_t r = 0; r < 20; ++r) s(r, 0) = 0.2 + 0.1 * static_cast<double>(r);
    CHECK(pair.risk(s).risk == 0.0);
  }
  SUBCASE("single violating state") {
    const LyapunovPair pair(constant_dynamics({1.0, 0.0}), linear_icnn(2, 0, 1.0, 1.0, 0.1), tiny_eps(0.1));
    const Matrix s = Matrix::from_rows({{2.05, 0.0}});
    CHECK(pair.value(Vector{2.05, 0.0}) == Approx(2.0).epsilon(1e-14));
    const RiskEval r = pair.risk(s);
    CHECK(r.risk == Approx(1.2).epsilon(1e-13));
    CHECK(r.per_state[0] == Approx(1.2).epsilon(1e-13));
    CHECK(r.origin_value == 0.0);
    CHECK(r.active_fraction == 1.0);
  }
}

TEST_CASE("risk: non-negative, order invariant, projected reading bounded by l/2") {
  Rng rng(6);
  for (int net = 0; net < 30; ++net) {
    LyapunovConfig cfg = small_config(rng);
    const LyapunovPair pair(5, cfg, rng);
    Matrix s = random_states(64, 5, rng, 2.0);
    const double risk = pair.risk(s).risk;
    CHECK(risk >= 0.0);

    std::vector<std::size_t> perm(64);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(rng.next_u64()));
    Matrix shuffled(64, 5);
    for (std::size_t r = 0; r < 64; ++r)
      std::copy(s.row(perm[r]).begin(), s.row(perm[r]).end(), shuffled.row(r).begin());
    CHECK(pair.risk(shuffled).risk == Approx(risk).epsilon(1e-12));

    cfg.risk_on_projected = true;
    const LyapunovPair projected(pair.dynamics(), pair.icnn(), cfg);
    CHECK(projected.risk(s).risk <= cfg.width / 2.0 + 1e-12);
  }
}

TEST_CASE("anchor loss examples") {
  Rng rng(7);
  const Vector c{0.3, -1.7, 2.0};
  const LyapunovPair pair(constant_dynamics(c), linear_icnn(3, 0, 1.0, 1.0, 0.1), LyapunovConfig{});
  const Matrix s = random_states(10, 3, rng);
  Matrix s2 = s;
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t k = 0; k < 3; ++k) s2(r, k) = s(r, k) + c[k] * 0.1;
  CHECK(pair.anchor_loss(s, s2) == 0.0);

  const LyapunovPair still(constant_dynamics({0.0, 0.0, 0.0}), linear_icnn(3, 0, 1.0, 1.0, 0.1), LyapunovConfig{});
  CHECK(still.anchor_loss(s, s) == 0.0);
  Matrix moved = s;
  for (std::size_t r = 0; r < 10; ++r) moved(r, 1) += 2.0;
  CHECK(still.anchor_loss(s, moved) == Approx(4.0).epsilon(1e-12));
}

TEST_CASE("risk and anchor gradients match finite differences") {
  Rng rng(8);
  for (bool projected : {false, true}) {
    double worst = 0.0;
    int probes = 0;
    for (int config = 0; config < 20; ++config) {
      LyapunovConfig cfg = small_config(rng);
      cfg.risk_on_projected = projected;
      cfg.alpha = rng.uniform(0.05, 1.0);
      LyapunovPair pair(4, cfg, rng);
      const Matrix s = random_states(24, 4, rng, 1.5);
      const Matrix s2 = random_states(24, 4, rng, 1.5);
      const double w_risk = 1.3, w_anchor = 0.7;
      auto loss = [&] { return w_risk * pair.risk(s).risk + w_anchor * pair.anchor_loss(s, s2); };

      PairGrads g = pair.make_grads();
      pair.risk_with_grad(s, w_risk, g);
      pair.anchor_with_grad(s, s2, w_anchor, g);

      auto dyn = pair.dynamics().parameters();
      for (std::size_t t = 0; t < dyn.size(); ++t) {
        const auto p = testing::probe_gradient(loss, pair.dynamics().parameters()[t], g.dynamics[t], 2, rng);
        worst = std::max(worst, p.worst);
        probes += p.probes;
      }
      auto icnn = pair.icnn().parameters();
      for (std::size_t t = 0; t < icnn.size(); ++t) {
        const auto p = testing::probe_gradient(loss, pair.icnn().parameters()[t], g.icnn[t], 2, rng);
        worst = std::max(worst, p.worst);
        probes += p.probes;
      }
    }
    MESSAGE(std::string(projected ? "projected" : "nominal") << " reading: worst relative error " << worst << " over " << probes
                                                  << " probes");
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("training step keeps the certificate convex and lowers risk on a fixed batch") {
  Rng rng(9);
  LyapunovPair pair(4, {}, rng);
  const Matrix s = random_states(128, 4, rng, 2.0);
  const double before = pair.risk(s).risk;
  for (int k = 0; k < 200; ++k) {
    PairGrads g = pair.make_grads();
    pair.risk_with_grad(s, 1.0, g);
    REQUIRE(pair.apply(g));
  }
  CHECK(pair.icnn().convex_weights_nonnegative());
  MESSAGE("risk " << before << " -> " << pair.risk(s).risk);
  CHECK(pair.risk(s).risk < before);
  CHECK(pair.value(Vector(4, 0.0)) == 0.0);
}

TEST_CASE("checkpoint round trip and config validation") {
  Rng rng(10);
  const LyapunovPair pair(6, {}, rng);
  const LyapunovPair back = LyapunovPair::from_json(nlohmann::json::parse(pair.to_json().dump()));
  CHECK(back == pair);
  LyapunovConfig bad;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(LyapunovPair(3, bad, rng), std::invalid_argument);
}
