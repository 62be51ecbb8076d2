#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "sbcq/drivesim/highway.hpp"
#include "sbcq/drivesim/parking.hpp"

using namespace sbcq;
using namespace sbcq::drivesim;
using doctest::Approx;

namespace {

const double kZero[2] = {0.0, 0.0};

// Point-in-rectangle test used by the sampling oracle; deliberately not SAT.
bool inside(const OrientedBox& b, double px, double py, double pad) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double dx = px - b.cx, dy = py - b.cy;
  const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.length + pad && std::abs(ly) <= 0.5 * b.width + pad;
}

// Overlap by sampling points of `a` on a grid (grown or shrunk by `pad`) and testing them against `b`.
bool sampled_overlap(const OrientedBox& a, const OrientedBox& b, double h, double pad) {
  const double c = std::cos(a.heading), s = std::sin(a.heading);
  const double hl = 0.5 * a.length + pad, hw = 0.5 * a.width + pad;
  const int nl = static_cast<int>(std::ceil(2 * hl / h)), nw = static_cast<int>(std::ceil(2 * hw / h));
  for (int i = 0; i <= nl; ++i)
    for (int j = 0; j <= nw; ++j) {
      const double lx = -hl + 2 * hl * i / nl, ly = -hw + 2 * hw * j / nw;
      if (inside(b, a.cx + c * lx - s * ly, a.cy + s * lx + c * ly, pad)) return true;
    }
  return false;
}

std::vector<double> random_action(Rng& rng) { return {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)}; }

}  // namespace

TEST_CASE("bicycle: straight-line motion") {
  const BicycleParams p;
  const VehicleState s = bicycle_step({0.0, 3.0, 0.0, 10.0}, {0.0, 0.0}, p);
  CHECK(s.x == Approx(1.0).epsilon(1e-14));
  CHECK(s.y == 3.0);
  CHECK(s.heading == 0.0);
  CHECK(s.speed == 10.0);
}

TEST_CASE("bicycle: constant acceleration stays within the Euler bound of the closed form") {
  const BicycleParams p;
  VehicleState s{0.0, 0.0, 0.0, 10.0};
  for (int k = 0; k < 10; ++k) s = bicycle_step(s, {0.0, 1.0}, p);  // 5 m/s^2
  const double t = 10 * p.dt;
  CHECK(s.speed == Approx(15.0).epsilon(1e-12));
  const double closed = 10.0 * t + 0.5 * 5.0 * t * t;  // 12.5 m
  CHECK(std::abs(s.x - closed) <= 5.0 * p.dt * t + 1e-12);
}

TEST_CASE("bicycle: constant steering traces a circle of radius l_r / sin(beta)") {
  const BicycleParams p;
  const double steer = 0.5, v = 1.0;
  const double beta = slip_angle(steer * p.max_steer, p);
  const double radius = p.rear_axle / std::sin(beta);
  const double dpsi = v * std::sin(beta) / p.rear_axle * p.dt;
  const int steps = static_cast<int>(std::lround(2.0 * std::numbers::pi / dpsi));

  VehicleState s{2.0, -1.0, 0.3, v};
  const VehicleState start = s;
  double travelled = 0.0;
  for (int k = 0; k < steps; ++k) {
    const VehicleState n = bicycle_step(s, {steer, 0.0}, p);
    travelled += std::hypot(n.x - s.x, n.y - s.y);
    s = n;
  }
  CHECK(std::hypot(s.x - start.x, s.y - start.y) < 0.1);
  CHECK(travelled == Approx(2.0 * std::numbers::pi * radius).epsilon(0.01));
}

TEST_CASE("bicycle: zero controls keep speed exactly constant") {
  const BicycleParams p;
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    VehicleState s{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-3, 3), rng.uniform(0, 30)};
    const double v0 = s.speed;
    for (int k = 0; k < 50; ++k) s = bicycle_step(s, {0.0, 0.0}, p);
    CHECK(s.speed == v0);
  }
}

TEST_CASE("bicycle: controls are clipped, heading wrapped, bad input rejected") {
  const BicycleParams p;
  const VehicleState a = bicycle_step({0, 0, 0, 10}, {3.0, 7.0}, p);
  const VehicleState b = bicycle_step({0, 0, 0, 10}, {1.0, 1.0}, p);
  CHECK(a == b);

  const VehicleState w = bicycle_step({0, 0, std::numbers::pi - 1e-3, 10}, {1.0, 0.0}, p);
  CHECK(w.heading > -std::numbers::pi);
  CHECK(w.heading <= std::numbers::pi);
  CHECK(w.heading < 0.0);
  CHECK(wrap_angle(std::numbers::pi) == std::numbers::pi);
  CHECK(wrap_angle(-std::numbers::pi) == std::numbers::pi);
  CHECK(wrap_angle(3 * std::numbers::pi / 2) == Approx(-std::numbers::pi / 2));

  CHECK_THROWS_AS(bicycle_step({NAN, 0, 0, 0}, {0, 0}, p), std::invalid_argument);
  CHECK_THROWS_AS(bicycle_step({0, 0, 0, INFINITY}, {0, 0}, p), std::invalid_argument);
  CHECK_THROWS_AS(bicycle_step({0, 0, 0, 0}, {NAN, 0}, p), std::invalid_argument);

  BicycleParams bad;
  bad.rear_axle = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("collision: basic cases") {
  const OrientedBox a{0, 0, 0, 5, 2};
  CHECK_FALSE(collision_check(a, {10, 0, 0, 5, 2}));
  CHECK(collision_check(a, {0, 0, 0, 5, 2}));
  CHECK(collision_check(a, {5, 0, 0, 5, 2}));    // edges touch exactly
  CHECK_FALSE(collision_check(a, {5.001, 0, 0, 5, 2}));
  CHECK(collision_check(a, {0, 0, 0, 1, 1}));    // containment
}

TEST_CASE("collision: agrees with a point-sampling oracle on rotated squares") {
  Rng rng(17);
  const double h = 0.02;
  int decided = 0, mismatches = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const double dir = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double dist = rng.uniform(1.8, 3.2);  // straddles the diagonal touching distance
    const OrientedBox fixed{0, 0, 0, 2, 2};
    const OrientedBox turned{dist * std::cos(dir), dist * std::sin(dir), std::numbers::pi / 4 + rng.uniform(-0.2, 0.2), 2, 2};
    // A grid of step h puts a sample within h of every point, so padding by h brackets the truth;
    // configurations where the brackets disagree are too close to touching for this grid.
    const bool surely_hit = sampled_overlap(turned, fixed, h, -h);
    const bool maybe_hit = sampled_overlap(turned, fixed, h, h);
    if (surely_hit != maybe_hit) continue;
    ++decided;
    if (collision_check(turned, fixed) != surely_hit) ++mismatches;
  }
  CHECK(mismatches == 0);
  CHECK(decided > 9000);
}

TEST_CASE("collision: symmetric in its arguments") {
  Rng rng(5);
  for (int trial = 0; trial < 10000; ++trial) {
    const OrientedBox a{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-4, 4), rng.uniform(0.1, 6), rng.uniform(0.1, 3)};
    const OrientedBox b{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-4, 4), rng.uniform(0.1, 6), rng.uniform(0.1, 3)};
    REQUIRE(collision_check(a, b) == collision_check(b, a));
  }
}

TEST_CASE("highway: reward examples") {
  HighwayEnv env;
  env.set_scene({0, env.config().lane_center(1), 0, 30.0}, {});
  StepResult r = env.step(kZero);
  CHECK(r.reward == Approx(0.4).epsilon(1e-15));
  CHECK_FALSE(r.done);

  env.set_scene({0, env.config().lane_center(1), 0, 25.0}, {});
  CHECK(env.step(kZero).reward == Approx(0.2).epsilon(1e-15));

  env.set_scene({0, env.config().lane_center(1), 0, 20.0}, {{2.0, 1, 20.0, 20.0}});
  r = env.step(kZero);
  CHECK(r.info.collision);
  CHECK(r.done);
  CHECK(r.reward == Approx(-1.0).epsilon(1e-15));
  CHECK_THROWS_AS(env.step(kZero), std::logic_error);
}

TEST_CASE("highway: road departure ends the episode with the collision penalty") {
  HighwayEnv env;
  env.set_scene({0, 0.05, -0.5, 25.0}, {});
  const StepResult r = env.step(kZero);
  CHECK(r.done);
  CHECK(r.info.violation);
  CHECK(r.reward == Approx(0.2 - 1.0));
}

TEST_CASE("highway: observation layout") {
  HighwayEnv env;
  env.set_scene({0, 6.0, 0, 15.0}, {});
  const Vector obs = env.observe();
  REQUIRE(obs.size() == 20);
  CHECK(obs[0] == Approx(0.5));
  CHECK(obs[1] == Approx(-0.5));
  CHECK(obs[2] == 1.0);
  CHECK(obs[3] == 0.0);
  for (std::size_t i = 4; i < 20; ++i) CHECK(obs[i] == 0.0);

  env.set_scene({0, 6.0, 0, 15.0}, {{30.0, 3, 21.0, 21.0}, {-10.0, 1, 27.0, 27.0}});
  const Vector o2 = env.observe();
  CHECK(o2[4] == Approx(-0.10));  // nearest first
  CHECK(o2[6] == Approx(12.0 / 30.0));
  CHECK(o2[8] == Approx(0.30));
  CHECK(o2[9] == Approx(0.08));
  CHECK(o2[10] == Approx(6.0 / 30.0));
  CHECK(env.min_distance() == Approx(std::hypot(10.0, 0.0)));
}

TEST_CASE("highway: IDM") {
  const IdmParams p;
  CHECK(idm_accel(25.0, 25.0, INFINITY, 0.0, p) == Approx(0.0));
  CHECK(idm_accel(20.0, 25.0, INFINITY, 0.0, p) > 0.0);
  CHECK(idm_accel(25.0, 25.0, 10.0, 5.0, p) < -3.0);
  CHECK(idm_accel(25.0, 25.0, -1.0, 0.0, p) == -p.hard_brake);
}

TEST_CASE("highway: rollouts are deterministic, bounded, and observations stay in range") {
  auto rollout = [](std::uint64_t seed, double& lo, double& hi, double& obs_max, int& episodes) {
    HighwayEnv env;
    Rng rng(seed), act(seed + 100);
    std::vector<double> rewards;
    Vector obs = env.reset(rng);
    episodes = 1;
    for (int t = 0; t < 5000; ++t) {
      const StepResult r = env.step(random_action(act));
      rewards.push_back(r.reward);
      lo = std::min(lo, r.reward);
      hi = std::max(hi, r.reward);
      for (double v : r.obs) obs_max = std::max(obs_max, std::abs(v));
      if (r.done) {
        obs = env.reset(rng);
        ++episodes;
      }
    }
    return rewards;
  };
  double lo = 1e9, hi = -1e9, om = 0;
  int episodes = 0;
  const auto a = rollout(1, lo, hi, om, episodes);
  const auto b = rollout(1, lo, hi, om, episodes);
  CHECK(a == b);
  CHECK(lo >= -1.0);
  CHECK(hi <= 0.4);
  CHECK(om <= 2.0);
  CHECK(episodes > 1);
}

TEST_CASE("highway: step before reset is rejected; config validation") {
  HighwayEnv env;
  CHECK_THROWS_AS(env.step(kZero), std::logic_error);
  HighwayConfig bad;
  bad.v_min = 30;
  CHECK_THROWS_AS(HighwayEnv{bad}, std::invalid_argument);
}

TEST_CASE("highway: hazard certificate state") {
  HighwayEnv env;
  const auto& c = env.config();
  env.set_scene({0.0, c.lane_center(1), 0.0, 25.0}, {});
  CHECK(env.lyapunov_dim() == 6);
  for (double v : env.lyapunov_state(env.observe())) CHECK(v == 0.0);

  env.set_scene({0.0, c.lane_center(1) + 1.0, 0.0, 25.0}, {{15.0, 2, 25.0, 25.0}, {200.0, 0, 25.0, 25.0}});
  const Vector z = env.lyapunov_state(env.observe());
  REQUIRE(z.size() == 6);
  CHECK(z[0] == Approx(0.25).epsilon(1e-12));
  CHECK(z[1] == 0.0);
  CHECK(z[2] == Approx(1.0 - std::hypot(15.0, 3.0) / 30.0).epsilon(1e-12));
  CHECK(z[3] == 0.0);  // beyond the radius
  CHECK(z[4] == 0.0);  // empty slot
  CHECK(z[5] == 0.0);

  // Off the outer lane the offset saturates instead of wrapping to the next lane.
  env.set_scene({0.0, -3.0, 0.0, 25.0}, {});
  CHECK(env.lyapunov_state(env.observe())[0] == 0.0);

  HighwayConfig raw;
  raw.lyapunov_state = "raw";
  HighwayEnv raw_env(raw);
  raw_env.set_scene({0.0, 6.0, 0.1, 25.0}, {{15.0, 2, 25.0, 25.0}});
  CHECK(raw_env.lyapunov_dim() == raw_env.obs_dim());
  CHECK(raw_env.lyapunov_state(raw_env.observe()) == raw_env.observe());

  HighwayConfig bad;
  bad.lyapunov_state = "other";
  CHECK_THROWS_AS(HighwayEnv{bad}, std::invalid_argument);
}

TEST_CASE("parking: reward examples") {
  ParkingEnv env;
  const auto& c = env.config();
  env.set_ego({c.goal_x, c.goal_y, c.goal_heading, 0.0});
  StepResult r = env.step(kZero);
  CHECK(r.reward == 0.0);
  CHECK(r.info.success);
  CHECK(r.done);

  env.set_ego({c.goal_x + 1.0, c.goal_y, c.goal_heading, 0.0});
  r = env.step(kZero);
  CHECK_FALSE(r.info.violation);
  CHECK(r.reward == Approx(-1.0).epsilon(1e-12));

  ParkingConfig cfg = ParkingConfig::defaults();
  cfg.obstacles.push_back({1.5, 8.5, 0.0, 0.5, 0.5});
  ParkingEnv blocked(cfg);
  blocked.set_ego({c.goal_x + 1.0, c.goal_y, c.goal_heading, 0.0});
  r = blocked.step(kZero);
  CHECK(r.info.violation);
  CHECK(r.done);
  CHECK(r.reward == Approx(-6.0).epsilon(1e-12));
}

TEST_CASE("parking: observation mirrors the goal when parked") {
  ParkingEnv env;
  const auto& c = env.config();
  env.set_ego({c.goal_x, c.goal_y, c.goal_heading, 0.0});
  const Vector obs = env.observe();
  REQUIRE(obs.size() == 12);
  for (int i = 0; i < 6; ++i) CHECK(obs[i] == Approx(obs[6 + i]).epsilon(1e-15));
  const Vector ls = env.lyapunov_state(obs);
  for (double v : ls) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("parking: rollouts are deterministic, rewards non-positive, observations in range") {
  auto rollout = [](std::uint64_t seed, double& hi, double& obs_max) {
    ParkingEnv env;
    Rng rng(seed), act(seed + 7);
    std::vector<double> rewards;
    env.reset(rng);
    for (int t = 0; t < 10000; ++t) {
      const StepResult r = env.step(random_action(act));
      rewards.push_back(r.reward);
      hi = std::max(hi, r.reward);
      for (double v : r.obs) obs_max = std::max(obs_max, std::abs(v));
      if (r.done) env.reset(rng);
    }
    return rewards;
  };
  double hi = -1e9, om = 0;
  CHECK(rollout(4, hi, om) == rollout(4, hi, om));
  CHECK(hi <= 0.0);
  CHECK(om <= 2.0);
}

TEST_CASE("parking: truncation at the step limit") {
  ParkingEnv env;
  Rng rng(2);
  env.reset(rng);
  StepResult r;
  int steps = 0;
  do {
    r = env.step(kZero);
    ++steps;
  } while (!r.done);
  CHECK(steps == env.max_steps());
  CHECK(r.info.truncated);
  CHECK_FALSE(r.info.success);
}

TEST_CASE("configs: JSON round trip and validation") {
  const HighwayConfig h;
  nlohmann::json hj = h;
  const HighwayConfig h2 = hj.get<HighwayConfig>();
  CHECK(nlohmann::json(h2) == hj);

  const ParkingConfig p = ParkingConfig::defaults();
  nlohmann::json pj = p;
  CHECK(nlohmann::json(pj.get<ParkingConfig>()) == pj);

  CHECK_THROWS_AS(make_env("highway", {{"lanse", 3}}), std::invalid_argument);
  CHECK_THROWS_AS(make_env("racetrack"), std::invalid_argument);
  CHECK(make_env("highway", {{"hdv_count", 0}})->config_json()["hdv_count"] == 0);
  CHECK(make_env("parking")->obs_dim() == 12);
  CHECK(make_env("highway")->obs_dim() == 20);

  ParkingConfig overlapping = ParkingConfig::defaults();
  overlapping.obstacles.push_back({0.0, 8.5, 0.0, 1.0, 1.0});
  CHECK_THROWS_AS(ParkingEnv{overlapping}, std::invalid_argument);
}
