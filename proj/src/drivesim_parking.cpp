#include "sbcq/drivesim/parking.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sbcq/core/json_fields.hpp"

namespace sbcq::drivesim {

BicycleParams ParkingConfig::default_vehicle() {
  BicycleParams p;
  p.min_speed = -5.0;
  p.max_speed = 5.0;
  return p;
}

std::vector<OrientedBox> ParkingConfig::default_obstacles() {
  // Parked cars filling the slots on both sides of the goal.
  std::vector<OrientedBox> out;
  for (int k = 1; k <= 5; ++k)
    for (double side : {-1.0, 1.0}) out.push_back({side * 3.5 * k, 8.5, std::numbers::pi / 2.0, 5.0, 2.0});
  return out;
}

ParkingConfig ParkingConfig::defaults() {
  ParkingConfig c;
  c.obstacles = default_obstacles();
  return c;
}

std::vector<OrientedBox> ParkingConfig::walls() const {
  const double hx = 0.5 * arena_length, hy = 0.5 * arena_width, t = 1.0;
  return {{0.0, hy + 0.5 * t, 0.0, arena_length + 2 * t, t},
          {0.0, -hy - 0.5 * t, 0.0, arena_length + 2 * t, t},
          {hx + 0.5 * t, 0.0, 0.0, t, arena_width},
          {-hx - 0.5 * t, 0.0, 0.0, t, arena_width}};
}

void ParkingConfig::validate() const {
  if (!(arena_length > 0.0) || !(arena_width > 0.0)) throw std::invalid_argument("parking: arena must be non-empty");
  if (std::abs(goal_x) >= 0.5 * arena_length || std::abs(goal_y) >= 0.5 * arena_width)
    throw std::invalid_argument("parking: goal outside the arena");
  if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("parking: reward weights must be >= 0");
  if (max_steps < 1) throw std::invalid_argument("parking: max_steps must be >= 1");
  if (!(success_position > 0.0) || !(success_heading > 0.0)) throw std::invalid_argument("parking: bad success thresholds");
  if (!(spawn_x_lo <= spawn_x_hi) || !(spawn_y_lo <= spawn_y_hi)) throw std::invalid_argument("parking: bad spawn box");
  if (!(position_scale > 0.0) || !(velocity_scale > 0.0)) throw std::invalid_argument("parking: bad observation scales");
  vehicle.validate();
  const OrientedBox slot{goal_x, goal_y, goal_heading, vehicle.length(), vehicle.width};
  for (const OrientedBox& o : obstacles) {
    if (!(o.length > 0.0) || !(o.width > 0.0)) throw std::invalid_argument("parking: obstacle extents must be > 0");
    if (collision_check(slot, o)) throw std::invalid_argument("parking: obstacle overlaps the goal slot");
  }
}

void to_json(nlohmann::json& j, const ParkingConfig& c) {
  j = {{"arena_length", c.arena_length},
       {"arena_width", c.arena_width},
       {"goal_x", c.goal_x},
       {"goal_y", c.goal_y},
       {"goal_heading", c.goal_heading},
       {"obstacles", c.obstacles},
       {"alpha", c.alpha},
       {"beta", c.beta},
       {"max_steps", c.max_steps},
       {"success_position", c.success_position},
       {"success_heading", c.success_heading},
       {"spawn_x", {c.spawn_x_lo, c.spawn_x_hi}},
       {"spawn_y", {c.spawn_y_lo, c.spawn_y_hi}},
       {"position_scale", c.position_scale},
       {"velocity_scale", c.velocity_scale},
       {"vehicle", c.vehicle}};
}

void from_json(const nlohmann::json& j, ParkingConfig& c) {
  require_known_keys(j,
                     {"arena_length", "arena_width", "goal_x", "goal_y", "goal_heading", "obstacles", "alpha", "beta",
                      "max_steps", "success_position", "success_heading", "spawn_x", "spawn_y", "position_scale",
                      "velocity_scale", "vehicle"},
                     "parking");
  read_field(j, "arena_length", c.arena_length);
  read_field(j, "arena_width", c.arena_width);
  read_field(j, "goal_x", c.goal_x);
  read_field(j, "goal_y", c.goal_y);
  read_field(j, "goal_heading", c.goal_heading);
  read_field(j, "obstacles", c.obstacles);
  read_field(j, "alpha", c.alpha);
  read_field(j, "beta", c.beta);
  read_field(j, "max_steps", c.max_steps);
  read_field(j, "success_position", c.success_position);
  read_field(j, "success_heading", c.success_heading);
  if (auto it = j.find("spawn_x"); it != j.end()) {
    const auto r = it->get<std::array<double, 2>>();
    c.spawn_x_lo = r[0];
    c.spawn_x_hi = r[1];
  }
  if (auto it = j.find("spawn_y"); it != j.end()) {
    const auto r = it->get<std::array<double, 2>>();
    c.spawn_y_lo = r[0];
    c.spawn_y_hi = r[1];
  }
  read_field(j, "position_scale", c.position_scale);
  read_field(j, "velocity_scale", c.velocity_scale);
  if (auto it = j.find("vehicle"); it != j.end()) {
    nlohmann::json merged = c.vehicle;
    merged.update(*it);
    c.vehicle = merged.get<BicycleParams>();
  }
  c.validate();
}

ParkingEnv::ParkingEnv(ParkingConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  obstacles_ = cfg_.obstacles;
  for (const OrientedBox& w : cfg_.walls()) obstacles_.push_back(w);
}

Vector ParkingEnv::reset(Rng& rng) {
  ego_.x = rng.uniform(cfg_.spawn_x_lo, cfg_.spawn_x_hi);
  ego_.y = rng.uniform(cfg_.spawn_y_lo, cfg_.spawn_y_hi);
  ego_.heading = wrap_angle(rng.uniform(-std::numbers::pi, std::numbers::pi));
  ego_.speed = 0.0;
  begin_episode();
  return observe();
}

void ParkingEnv::set_ego(const VehicleState& s) {
  ego_ = s;
  begin_episode();
}

ParkingEnv::State6 ParkingEnv::physical_state(const VehicleState& s) {
  const double c = std::cos(s.heading), sn = std::sin(s.heading);
  return {s.x, s.y, s.speed * c, s.speed * sn, c, sn};
}

ParkingEnv::State6 ParkingEnv::goal_state() const {
  return {cfg_.goal_x, cfg_.goal_y, 0.0, 0.0, std::cos(cfg_.goal_heading), std::sin(cfg_.goal_heading)};
}

double ParkingEnv::reward(const VehicleState& s, bool violation) const {
  const State6 cur = physical_state(s), goal = goal_state();
  double err = 0.0;
  for (std::size_t i = 0; i < cur.size(); ++i) err += (cur[i] - goal[i]) * (cur[i] - goal[i]);
  return -cfg_.alpha * err - cfg_.beta * (violation ? 1.0 : 0.0);
}

bool ParkingEnv::in_violation(const VehicleState& s) const {
  const OrientedBox me = footprint(s, cfg_.vehicle);
  return std::any_of(obstacles_.begin(), obstacles_.end(), [&](const OrientedBox& o) { return collision_check(me, o); });
}

bool ParkingEnv::at_goal(const VehicleState& s) const {
  return std::hypot(s.x - cfg_.goal_x, s.y - cfg_.goal_y) < cfg_.success_position &&
         std::abs(wrap_angle(s.heading - cfg_.goal_heading)) < cfg_.success_heading;
}

StepResult ParkingEnv::step(std::span<const double> action) {
  check_steppable();
  ego_ = bicycle_step(ego_, Action::from(action), cfg_.vehicle);
  ++steps_;

  StepResult out;
  out.info.violation = in_violation(ego_);
  out.info.collision = out.info.violation;
  out.info.success = !out.info.violation && at_goal(ego_);
  out.reward = reward(ego_, out.info.violation);
  out.info.truncated = !out.info.violation && !out.info.success && steps_ >= cfg_.max_steps;
  out.done = out.info.violation || out.info.success || out.info.truncated;
  done_ = out.done;
  out.obs = observe();
  return out;
}

Vector ParkingEnv::observe() const {
  const State6 s = physical_state(ego_), g = goal_state();
  const double scale[6] = {cfg_.position_scale, cfg_.position_scale, cfg_.velocity_scale, cfg_.velocity_scale, 1.0, 1.0};
  Vector obs(12);
  for (int i = 0; i < 6; ++i) {
    obs[i] = s[i] / scale[i];
    obs[6 + i] = g[i] / scale[i];
  }
  return obs;
}

TrafficFrame ParkingEnv::frame() const { return {{ego_.x, ego_.y}, {}}; }

Vector ParkingEnv::lyapunov_state(std::span<const double> obs) const {
  if (obs.size() != obs_dim()) throw std::invalid_argument("parking: observation size mismatch");
  Vector out(6);
  for (int i = 0; i < 6; ++i) out[i] = obs[i] - obs[6 + i];
  return out;
}

}  // namespace sbcq::drivesim
