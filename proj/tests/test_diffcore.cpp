#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "sbcq/diffcore/adam.hpp"
#include "sbcq/diffcore/dense.hpp"
#include "sbcq/diffcore/icnn.hpp"
#include "sbcq/diffcore/noisy.hpp"
#include "support/fd.hpp"

using namespace sbcq;
using namespace sbcq::diffcore;
using sbcq::testing::central_difference;
using sbcq::testing::relative_error;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-scale, scale);
  return m;
}

NoisyNet scalar_noisy(double mu_w, double sigma_w, double eps_w) {
  NoisyDense l;
  l.mu_w = Matrix::from_rows({{mu_w}});
  l.sigma_w = Matrix::from_rows({{sigma_w}});
  l.eps_w = Matrix::from_rows({{eps_w}});
  l.mu_b = {0.0};
  l.sigma_b = {0.0};
  l.eps_b = {0.0};
  l.act = Activation::identity();
  return NoisyNet({l});
}

// Weighted sum of outputs, so every output coordinate contributes to the check.
double weighted_sum(const Matrix& y, const Matrix& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * weights.values()[i];
  return s;
}

}  // namespace

TEST_CASE("smoothed ReLU branch values") {
  CHECK(smoothed_relu(-1.0, 0.1) == 0.0);
  CHECK(smoothed_relu(0.05, 0.1) == doctest::Approx(0.0125).epsilon(1e-15));
  CHECK(smoothed_relu(1.0, 0.1) == doctest::Approx(0.95).epsilon(1e-15));
  CHECK_THROWS_AS(smoothed_relu(1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(smoothed_relu(1.0, -0.2), std::invalid_argument);
  CHECK_THROWS_AS(Activation::smoothed_relu(0.0), std::invalid_argument);
}

TEST_CASE("smoothed ReLU is monotone and C1 at both knots") {
  const double l = 0.1;
  double prev = smoothed_relu(-1.0, l);
  for (double x = -1.0; x <= 1.0; x += 1e-3) {
    const double y = smoothed_relu(x, l);
    CHECK(y >= prev);
    prev = y;
  }
  for (double knot : {0.0, l}) {
    const double lo = knot - 1e-7, hi = knot + 1e-7;
    CHECK(std::abs(smoothed_relu(hi, l) - smoothed_relu(lo, l)) < 1e-6);
    CHECK(std::abs(smoothed_relu_grad(hi, l) - smoothed_relu_grad(lo, l)) < 1e-5);
  }
}

TEST_CASE("forward examples") {
  SUBCASE("noisy scalar layer evaluates w' = mu + sigma*eps") {
    auto net = scalar_noisy(2.0, 0.5, 1.0);
    CHECK(net.forward(Matrix::from_rows({{3.0}}))(0, 0) == doctest::Approx(7.5));
  }
  SUBCASE("zero noise reduces to the mean dense layer") {
    Rng rng(3);
    const std::size_t sizes[] = {5, 7, 3};
    auto noisy = NoisyNet::make(sizes, Activation::relu(), Activation::tanh(), rng);
    noisy.zero_noise();
    std::vector<DenseLayer> layers;
    for (const auto& l : noisy.layers()) layers.push_back({l.mu_w, l.mu_b, l.act});
    DenseNet dense(layers);
    const Matrix x = random_matrix(9, 5, rng);
    CHECK(noisy.forward(x) == dense.forward(x));
    // with_noise=false ignores whatever noise is stored
    noisy.resample_noise(rng);
    CHECK(noisy.forward(x, nullptr, false) == dense.forward(x));
  }
  SUBCASE("all-zero two-layer dense net outputs zero") {
    DenseNet net({{Matrix(4, 3), Vector(4), Activation::relu()}, {Matrix(2, 4), Vector(2), Activation::identity()}});
    Rng rng(5);
    const Matrix y = net.forward(random_matrix(6, 3, rng, 10.0));
    for (double v : y.values()) CHECK(v == 0.0);
  }
  SUBCASE("dimension mismatch is rejected") {
    Rng rng(1);
    const std::size_t sizes[] = {3, 4, 1};
    auto net = DenseNet::make(sizes, Activation::relu(), Activation::identity(), rng);
    CHECK_THROWS_AS(net.forward(Matrix(2, 5)), std::invalid_argument);
    auto icnn = IcnnNet::make(3, std::span<const std::size_t>(sizes, 2), 0.1, rng);
    CHECK_THROWS_AS(icnn.forward(Matrix(2, 2)), std::invalid_argument);
  }
  SUBCASE("non-chaining layers are rejected") {
    CHECK_THROWS_AS(DenseNet({{Matrix(4, 3), Vector(4), Activation::relu()}, {Matrix(2, 5), Vector(2), Activation::identity()}}),
                    std::invalid_argument);
  }
}

TEST_CASE("backward examples") {
  SUBCASE("linear layer calculus") {
    const Matrix w = Matrix::from_rows({{1.0, 2.0, 3.0}, {-1.0, 0.5, 4.0}});
    DenseNet net({{w, Vector{0.0, 0.0}, Activation::identity()}});
    const Matrix x = Matrix::from_rows({{0.3, -0.2, 0.7}});
    const Matrix g = Matrix::from_rows({{2.0, -3.0}});
    DenseTape tape;
    net.forward(x, &tape);
    auto grads = net.make_grads();
    Matrix dx;
    net.backward(tape, g, &grads, &dx);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(dx(0, k) == doctest::Approx(w(0, k) * 2.0 + w(1, k) * -3.0));
      CHECK(grads[0][0 * 3 + k] == doctest::Approx(2.0 * x(0, k)));
      CHECK(grads[0][1 * 3 + k] == doctest::Approx(-3.0 * x(0, k)));
    }
  }
  SUBCASE("noisy scalar layer: d/dmu = d/dsigma = 3") {
    auto net = scalar_noisy(2.0, 0.5, 1.0);
    const Matrix x = Matrix::from_rows({{3.0}});
    NoisyTape tape;
    net.forward(x, &tape);
    auto grads = net.make_grads();
    net.backward(tape, Matrix::from_rows({{1.0}}), &grads, nullptr);
    CHECK(grads[0][0] == doctest::Approx(3.0));
    CHECK(grads[1][0] == doctest::Approx(3.0));
    // frozen finite-difference oracle
    auto params = net.parameters();
    auto loss = [&] { return net.forward(x)(0, 0); };
    const double fd_mu = central_difference(loss, params[0][0]);
    const double fd_sigma = central_difference(loss, params[1][0]);
    CHECK(relative_error(fd_mu, grads[0][0]) < 1e-6);
    CHECK(relative_error(fd_sigma, grads[1][0]) < 1e-6);
  }
  SUBCASE("ICNN 2-8-1 matches finite differences") {
    Rng rng(21);
    const std::size_t hidden[] = {8};
    auto icnn = IcnnNet::make(2, hidden, 0.1, rng);
    const Matrix x = random_matrix(1, 2, rng);
    IcnnTape tape;
    icnn.forward(x, &tape);
    auto grads = icnn.make_grads();
    Matrix dx;
    const Vector one{1.0};
    icnn.backward(tape, one, {}, &grads, &dx, nullptr);
    Matrix xm = x;
    auto loss = [&] { return icnn.forward(xm)[0]; };
    for (std::size_t k = 0; k < 2; ++k) CHECK(relative_error(central_difference(loss, xm(0, k)), dx(0, k)) < 1e-4);
    auto params = icnn.parameters();
    for (std::size_t t = 0; t < params.size(); ++t)
      for (std::size_t k = 0; k < params[t].size(); ++k)
        CHECK(relative_error(central_difference(loss, params[t][k]), grads[t][k]) < 1e-4);
  }
  SUBCASE("stale or foreign tapes are rejected") {
    Rng rng(2);
    const std::size_t sizes[] = {3, 4, 2};
    auto net = DenseNet::make(sizes, Activation::relu(), Activation::identity(), rng);
    auto other = net;
    DenseTape tape;
    net.forward(Matrix(1, 3), &tape);
    CHECK_THROWS_AS(other.backward(tape, Matrix(1, 2), nullptr, nullptr), std::invalid_argument);
    net.parameters();  // mutable access invalidates
    CHECK_THROWS_AS(net.backward(tape, Matrix(1, 2), nullptr, nullptr), std::invalid_argument);
  }
}

TEST_CASE("gradient correctness across network types (random 5-point probes)") {
  Rng rng(99);
  double worst = 0.0;
  for (int config = 0; config < 20; ++config) {
    const std::size_t in = 2 + rng.index(5), hid = 3 + rng.index(6), out = 1 + rng.index(3);
    const std::size_t sizes[] = {in, hid, hid, out};
    const std::size_t batch = 1 + rng.index(4);
    const Matrix x = random_matrix(batch, in, rng);
    const Matrix wts = random_matrix(batch, out, rng);

    auto dense = DenseNet::make(sizes, config % 2 ? Activation::tanh() : Activation::relu(),
                                Activation::smoothed_relu(0.3), rng);
    {
      DenseTape tape;
      dense.forward(x, &tape);
      auto grads = dense.make_grads();
      dense.backward(tape, wts, &grads, nullptr);
      auto params = dense.parameters();
      auto loss = [&] { return weighted_sum(dense.forward(x), wts); };
      for (std::size_t t = 0; t < params.size(); ++t)
        worst = std::max(worst, sbcq::testing::probe_gradient(loss, params[t], grads[t], 5, rng).worst);
    }

    auto noisy = NoisyNet::make(sizes, Activation::tanh(), Activation::identity(), rng);
    noisy.resample_noise(rng);
    {
      NoisyTape tape;
      noisy.forward(x, &tape);
      auto grads = noisy.make_grads();
      Matrix dx;
      noisy.backward(tape, wts, &grads, &dx);
      auto params = noisy.parameters();
      auto loss = [&] { return weighted_sum(noisy.forward(x), wts); };
      for (std::size_t t = 0; t < params.size(); ++t)
        worst = std::max(worst, sbcq::testing::probe_gradient(loss, params[t], grads[t], 5, rng).worst);
      Matrix xm = x;
      auto loss_x = [&] { return weighted_sum(noisy.forward(xm), wts); };
      for (std::size_t k = 0; k < xm.size(); ++k)
        worst = std::max(worst, relative_error(central_difference(loss_x, xm.values()[k]), dx.values()[k]));
    }

    const std::size_t icnn_hidden[] = {hid, hid};
    auto icnn = IcnnNet::make(in, icnn_hidden, 0.2, rng);
    {
      const Matrix dir = random_matrix(batch, in, rng);
      Vector ga(batch), ta(batch);
      for (std::size_t r = 0; r < batch; ++r) {
        ga[r] = rng.uniform(-1, 1);
        ta[r] = rng.uniform(-1, 1);
      }
      IcnnTape tape;
      icnn.forward_jvp(x, dir, &tape);
      auto grads = icnn.make_grads();
      Matrix xa, da;
      icnn.backward(tape, ga, ta, &grads, &xa, &da);
      Matrix xm = x, dm = dir;
      auto loss = [&] {
        auto [g, gd] = icnn.forward_jvp(xm, dm);
        double s = 0.0;
        for (std::size_t r = 0; r < batch; ++r) s += ga[r] * g[r] + ta[r] * gd[r];
        return s;
      };
      auto params = icnn.parameters();
      for (std::size_t t = 0; t < params.size(); ++t)
        worst = std::max(worst, sbcq::testing::probe_gradient(loss, params[t], grads[t], 5, rng).worst);
      for (std::size_t k = 0; k < xm.size(); ++k) {
        worst = std::max(worst, relative_error(central_difference(loss, xm.values()[k]), xa.values()[k]));
        worst = std::max(worst, relative_error(central_difference(loss, dm.values()[k]), da.values()[k]));
      }
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("ICNN tangent equals the reverse-mode directional derivative") {
  Rng rng(8);
  const std::size_t hidden[] = {16, 16};
  auto icnn = IcnnNet::make(5, hidden, 0.1, rng);
  const Matrix x = random_matrix(20, 5, rng, 2.0);
  const Matrix dir = random_matrix(20, 5, rng);
  auto [g, gdot] = icnn.forward_jvp(x, dir);
  const Matrix grad = icnn.input_gradient(x);
  for (std::size_t r = 0; r < 20; ++r) {
    double dot = 0.0;
    for (std::size_t k = 0; k < 5; ++k) dot += grad(r, k) * dir(r, k);
    CHECK(gdot[r] == doctest::Approx(dot).epsilon(1e-12));
  }
}

TEST_CASE("ICNN random-chord convexity") {
  Rng rng(17);
  int violations = 0;
  for (int net_id = 0; net_id < 10; ++net_id) {
    const std::size_t hidden[] = {32, 32};
    auto icnn = IcnnNet::make(6, hidden, 0.1, rng);
    for (int i = 0; i < 100; ++i) {
      Vector a(6), b(6), m(6);
      const double t = rng.uniform();
      for (std::size_t k = 0; k < 6; ++k) {
        a[k] = rng.uniform(-3, 3);
        b[k] = rng.uniform(-3, 3);
        m[k] = t * a[k] + (1 - t) * b[k];
      }
      if (icnn.value(m) > t * icnn.value(a) + (1 - t) * icnn.value(b) + 1e-8) ++violations;
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("factored noise") {
  SUBCASE("deterministic from the same rng state") {
    Rng a(42), b(42);
    auto n1 = sample_factored_noise(3, 4, a);
    auto n2 = sample_factored_noise(3, 4, b);
    CHECK(n1.eps_w == n2.eps_w);
    CHECK(n1.eps_b == n2.eps_b);
  }
  SUBCASE("f(1)*f(4) = 2") {
    const Vector e_in{1.0}, e_out{4.0};
    auto n = factored_noise(e_in, e_out);
    CHECK(n.eps_w(0, 0) == doctest::Approx(2.0));
    CHECK(n.eps_b[0] == doctest::Approx(2.0));
    const Vector neg{-9.0};
    CHECK(factored_noise(e_in, neg).eps_w(0, 0) == doctest::Approx(-3.0));
  }
  SUBCASE("Monte Carlo mean of eps_w is zero within 3 standard errors") {
    Rng rng(123);
    const int draws = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < draws; ++i) {
      const double e = sample_factored_noise(1, 1, rng).eps_w(0, 0);
      sum += e;
      sumsq += e * e;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sumsq / draws - mean * mean) / draws);
    CHECK(std::abs(mean) < 3.0 * se);
  }
  SUBCASE("rejects empty shapes") {
    Rng rng(1);
    CHECK_THROWS_AS(sample_factored_noise(0, 3, rng), std::invalid_argument);
  }
}

TEST_CASE("noisy layer expectation equals the noise-free output") {
  Rng rng(55);
  const std::size_t sizes[] = {4, 3};
  auto net = NoisyNet::make(sizes, Activation::identity(), Activation::identity(), rng, 0.8);
  const Matrix x = random_matrix(1, 4, rng);
  const Matrix clean = net.forward(x, nullptr, false);
  const int draws = 10000;
  Vector sum(3, 0.0), sumsq(3, 0.0);
  for (int i = 0; i < draws; ++i) {
    net.resample_noise(rng);
    const Matrix y = net.forward(x);
    for (std::size_t k = 0; k < 3; ++k) {
      sum[k] += y(0, k);
      sumsq[k] += y(0, k) * y(0, k);
    }
  }
  for (std::size_t k = 0; k < 3; ++k) {
    const double mean = sum[k] / draws;
    const double se = std::sqrt((sumsq[k] / draws - mean * mean) / draws);
    CHECK(std::abs(mean - clean(0, k)) < 3.0 * se);
  }
}

TEST_CASE("Adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Vector p{1.0, -2.0};
    ParamList params{std::span<double>(p)};
    AdamState st(ConstParamList{std::span<const double>(p)}, {});
    REQUIRE(adam_step(params, GradBuffer{{0.0, 0.0}}, st));
    CHECK(p == Vector{1.0, -2.0});
  }
  SUBCASE("first bias-corrected step moves by lr") {
    Vector p{1.0};
    AdamState st(ConstParamList{std::span<const double>(p)}, {.lr = 0.1});
    REQUIRE(adam_step(ParamList{std::span<double>(p)}, GradBuffer{{1.0}}, st));
    // m̂ = 1, v̂ = 1 → Δ = 0.1 / (1 + 1e-8)
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-14));
  }
  SUBCASE("non-finite gradient is rejected without side effects") {
    Vector p{1.0};
    AdamState st(ConstParamList{std::span<const double>(p)}, {});
    const GradBuffer bad{{std::numeric_limits<double>::quiet_NaN()}};
    CHECK_FALSE(adam_step(ParamList{std::span<double>(p)}, bad, st));
    CHECK(p[0] == 1.0);
    CHECK(st.step == 0);
  }
  SUBCASE("ICNN convex-path weights are clamped after the step") {
    Rng rng(4);
    const std::size_t hidden[] = {3, 3};
    auto icnn = IcnnNet::make(2, hidden, 0.1, rng);
    AdamState st(std::as_const(icnn).parameters(), {.lr = 10.0});
    auto grads = icnn.make_grads();
    const auto mask = icnn.convex_mask();
    for (std::size_t t = 0; t < grads.size(); ++t)
      if (mask[t]) std::fill(grads[t].begin(), grads[t].end(), 1.0);
    REQUIRE(adam_step(icnn, grads, st));
    CHECK(icnn.convex_weights_nonnegative());
    CHECK(icnn.layers()[1].u(0, 0) == 0.0);
  }
}

TEST_CASE("checkpoint JSON round trip is bit-identical") {
  Rng rng(77);
  const std::size_t sizes[] = {6, 9, 2};
  const std::size_t hidden[] = {5, 5};
  auto dense = DenseNet::make(sizes, Activation::relu(), Activation::tanh(), rng);
  auto noisy = NoisyNet::make(sizes, Activation::relu(), Activation::tanh(), rng);
  noisy.resample_noise(rng);
  auto icnn = IcnnNet::make(6, hidden, 0.1, rng);
  AdamState st(std::as_const(dense).parameters(), {});
  REQUIRE(adam_step(dense.parameters(), dense.make_grads(), st));

  CHECK(DenseNet::from_json(nlohmann::json::parse(dense.to_json().dump())) == dense);
  CHECK(NoisyNet::from_json(nlohmann::json::parse(noisy.to_json().dump())) == noisy);
  CHECK(IcnnNet::from_json(nlohmann::json::parse(icnn.to_json().dump())) == icnn);
  CHECK(AdamState::from_json(nlohmann::json::parse(st.to_json().dump())) == st);

  Rng r1(5);
  r1.normal();
  Rng r2(0);
  r2.set_state(r1.state());
  CHECK(r1 == r2);
  CHECK(r1.normal() == r2.normal());
}

TEST_CASE("soft update and fingerprints") {
  Vector online{1.0, 3.0}, target{0.0, 1.0};
  soft_update(ParamList{std::span<double>(target)}, ConstParamList{std::span<const double>(online)}, 0.25);
  CHECK(target[0] == doctest::Approx(0.25));
  CHECK(target[1] == doctest::Approx(1.5));
  const auto before = fingerprint({std::span<const double>(target)});
  target[1] += 1e-15;
  CHECK(fingerprint({std::span<const double>(target)}) != before);
}
