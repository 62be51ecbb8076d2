#include "sbcq/drivesim/highway.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sbcq/core/json_fields.hpp"

namespace sbcq::drivesim {

void HighwayConfig::validate() const {
  if (lanes < 1) throw std::invalid_argument("highway: lanes must be >= 1");
  if (!(lane_width > 0.0)) throw std::invalid_argument("highway: lane_width must be > 0");
  if (hdv_count < 0) throw std::invalid_argument("highway: hdv_count must be >= 0");
  if (!(v_min < v_max) || v_min < 0.0) throw std::invalid_argument("highway: need 0 <= v_min < v_max");
  if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("highway: reward weights must be >= 0");
  if (max_steps < 1) throw std::invalid_argument("highway: max_steps must be >= 1");
  if (!(spawn_gap > 0.0) || !(spawn_ahead + spawn_behind > 0.0)) throw std::invalid_argument("highway: bad spawn range");
  if (lyapunov_state != "hazard" && lyapunov_state != "raw")
    throw std::invalid_argument("highway: lyapunov_state must be \"hazard\" or \"raw\"");
  if (!(hazard_radius > 0.0)) throw std::invalid_argument("highway: hazard_radius must be > 0");
  vehicle.validate();
}

void to_json(nlohmann::json& j, const HighwayConfig& c) {
  j = {{"lanes", c.lanes},
       {"lane_width", c.lane_width},
       {"hdv_count", c.hdv_count},
       {"v_min", c.v_min},
       {"v_max", c.v_max},
       {"alpha", c.alpha},
       {"beta", c.beta},
       {"max_steps", c.max_steps},
       {"ego_speed", c.ego_speed},
       {"spawn_behind", c.spawn_behind},
       {"spawn_ahead", c.spawn_ahead},
       {"spawn_gap", c.spawn_gap},
       {"idm",
        {{"max_accel", c.idm.max_accel},
         {"comfort_decel", c.idm.comfort_decel},
         {"min_gap", c.idm.min_gap},
         {"time_headway", c.idm.time_headway},
         {"exponent", c.idm.exponent},
         {"hard_brake", c.idm.hard_brake}}},
       {"vehicle", c.vehicle},
       {"lyapunov_state", c.lyapunov_state},
       {"hazard_radius", c.hazard_radius}};
}

void from_json(const nlohmann::json& j, HighwayConfig& c) {
  require_known_keys(j,
                     {"lanes", "lane_width", "hdv_count", "v_min", "v_max", "alpha", "beta", "max_steps", "ego_speed",
                      "spawn_behind", "spawn_ahead", "spawn_gap", "idm", "vehicle", "lyapunov_state", "hazard_radius"},
                     "highway");
  read_field(j, "lanes", c.lanes);
  read_field(j, "lane_width", c.lane_width);
  read_field(j, "hdv_count", c.hdv_count);
  read_field(j, "v_min", c.v_min);
  read_field(j, "v_max", c.v_max);
  read_field(j, "alpha", c.alpha);
  read_field(j, "beta", c.beta);
  read_field(j, "max_steps", c.max_steps);
  read_field(j, "ego_speed", c.ego_speed);
  read_field(j, "spawn_behind", c.spawn_behind);
  read_field(j, "spawn_ahead", c.spawn_ahead);
  read_field(j, "spawn_gap", c.spawn_gap);
  read_field(j, "lyapunov_state", c.lyapunov_state);
  read_field(j, "hazard_radius", c.hazard_radius);
  if (auto it = j.find("idm"); it != j.end()) {
    require_known_keys(*it, {"max_accel", "comfort_decel", "min_gap", "time_headway", "exponent", "hard_brake"},
                       "highway.idm");
    read_field(*it, "max_accel", c.idm.max_accel);
    read_field(*it, "comfort_decel", c.idm.comfort_decel);
    read_field(*it, "min_gap", c.idm.min_gap);
    read_field(*it, "time_headway", c.idm.time_headway);
    read_field(*it, "exponent", c.idm.exponent);
    read_field(*it, "hard_brake", c.idm.hard_brake);
  }
  if (auto it = j.find("vehicle"); it != j.end()) {
    nlohmann::json merged = c.vehicle;
    merged.update(*it);
    c.vehicle = merged.get<BicycleParams>();
  }
  c.validate();
}

double idm_accel(double speed, double desired_speed, double gap, double closing_speed, const IdmParams& p) {
  if (gap <= 0.0) return -p.hard_brake;
  const double free = desired_speed > 0.0 ? std::pow(speed / desired_speed, p.exponent) : 1.0;
  double interaction = 0.0;
  if (std::isfinite(gap)) {
    const double wanted = p.min_gap + std::max(0.0, speed * p.time_headway +
                                                        speed * closing_speed / (2.0 * std::sqrt(p.max_accel * p.comfort_decel)));
    interaction = (wanted / gap) * (wanted / gap);
  }
  return std::max(-p.hard_brake, p.max_accel * (1.0 - free - interaction));
}

HighwayEnv::HighwayEnv(HighwayConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.vehicle.min_speed = 0.0;
  cfg_.vehicle.max_speed = cfg_.v_max;
  cfg_.validate();
}

Vector HighwayEnv::reset(Rng& rng) {
  const int ego_lane = static_cast<int>(rng.index(static_cast<std::size_t>(cfg_.lanes)));
  ego_ = {0.0, cfg_.lane_center(ego_lane), 0.0, std::clamp(cfg_.ego_speed, 0.0, cfg_.v_max)};
  hdvs_.clear();
  for (int i = 0; i < cfg_.hdv_count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      Hdv h;
      h.lane = static_cast<int>(rng.index(static_cast<std::size_t>(cfg_.lanes)));
      h.x = rng.uniform(-cfg_.spawn_behind, cfg_.spawn_ahead);
      h.speed = rng.uniform(cfg_.v_min, cfg_.v_max);
      h.desired_speed = h.speed;
      bool clear = !(h.lane == ego_lane && std::abs(h.x - ego_.x) < cfg_.spawn_gap);
      for (const Hdv& o : hdvs_)
        if (o.lane == h.lane && std::abs(o.x - h.x) < cfg_.spawn_gap) clear = false;
      if (clear) {
        hdvs_.push_back(h);
        placed = true;
      }
    }
    if (!placed) throw std::runtime_error("highway: could not place HDVs; spawn range too crowded");
  }
  begin_episode();
  return observe();
}

void HighwayEnv::set_scene(const VehicleState& ego, std::vector<Hdv> hdvs) {
  for (const Hdv& h : hdvs)
    if (h.lane < 0 || h.lane >= cfg_.lanes) throw std::invalid_argument("highway: HDV lane out of range");
  ego_ = ego;
  hdvs_ = std::move(hdvs);
  begin_episode();
}

VehicleState HighwayEnv::hdv_state(const Hdv& h) const { return {h.x, cfg_.lane_center(h.lane), 0.0, h.speed}; }

std::vector<double> HighwayEnv::hdv_accels() const {
  const double ego_reach = 0.5 * cfg_.lane_width + 0.5 * cfg_.vehicle.width;
  const double len = cfg_.vehicle.length();
  std::vector<double> acc(hdvs_.size());
  for (std::size_t i = 0; i < hdvs_.size(); ++i) {
    const Hdv& h = hdvs_[i];
    double gap = INFINITY, leader_speed = h.speed;
    for (std::size_t k = 0; k < hdvs_.size(); ++k) {
      if (k == i || hdvs_[k].lane != h.lane || hdvs_[k].x <= h.x) continue;
      const double g = hdvs_[k].x - h.x - len;
      if (g < gap) {
        gap = g;
        leader_speed = hdvs_[k].speed;
      }
    }
    if (std::abs(ego_.y - cfg_.lane_center(h.lane)) < ego_reach && ego_.x > h.x) {
      const double g = ego_.x - h.x - len;
      if (g < gap) {
        gap = g;
        leader_speed = ego_.speed * std::cos(ego_.heading);
      }
    }
    acc[i] = idm_accel(h.speed, h.desired_speed, gap, h.speed - leader_speed, cfg_.idm);
  }
  return acc;
}

double HighwayEnv::speed_reward(double v) const {
  return cfg_.alpha * std::clamp((v - cfg_.v_min) / (cfg_.v_max - cfg_.v_min), 0.0, 1.0);
}

double HighwayEnv::min_distance() const {
  double best = INFINITY;
  for (const Hdv& h : hdvs_) best = std::min(best, std::hypot(h.x - ego_.x, cfg_.lane_center(h.lane) - ego_.y));
  return best;
}

bool HighwayEnv::ego_collides() const {
  const OrientedBox me = footprint(ego_, cfg_.vehicle);
  for (const Hdv& h : hdvs_)
    if (collision_check(me, footprint(hdv_state(h), cfg_.vehicle))) return true;
  return false;
}

bool HighwayEnv::ego_off_road() const { return ego_.y < 0.0 || ego_.y > cfg_.road_width(); }

StepResult HighwayEnv::step(std::span<const double> action) {
  check_steppable();
  const Action a = Action::from(action);
  const std::vector<double> acc = hdv_accels();
  ego_ = bicycle_step(ego_, a, cfg_.vehicle);
  const double dt = cfg_.vehicle.dt;
  for (std::size_t i = 0; i < hdvs_.size(); ++i) {
    hdvs_[i].speed = std::max(0.0, hdvs_[i].speed + acc[i] * dt);
    hdvs_[i].x += hdvs_[i].speed * dt;
  }
  ++steps_;

  StepResult out;
  const bool hit = ego_collides();
  const bool off_road = ego_off_road();
  out.info.collision = hit || off_road;
  out.info.violation = off_road;
  out.info.min_distance = min_distance();
  out.reward = speed_reward(ego_.speed) - cfg_.beta * (out.info.collision ? 1.0 : 0.0);
  out.info.truncated = !out.info.collision && steps_ >= cfg_.max_steps;
  out.done = out.info.collision || out.info.truncated;
  done_ = out.done;
  out.obs = observe();
  return out;
}

Vector HighwayEnv::observe() const {
  Vector obs(obs_dim(), 0.0);
  obs[0] = ego_.speed / cfg_.v_max;
  obs[1] = std::clamp((ego_.y - 0.5 * cfg_.road_width()) / cfg_.lane_width, -2.0, 2.0);
  obs[2] = std::cos(ego_.heading);
  obs[3] = std::sin(ego_.heading);

  std::vector<std::size_t> order(hdvs_.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> dist(hdvs_.size());
  for (std::size_t i = 0; i < hdvs_.size(); ++i)
    dist[i] = std::hypot(hdvs_[i].x - ego_.x, cfg_.lane_center(hdvs_[i].lane) - ego_.y);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });

  const double evx = ego_.speed * std::cos(ego_.heading), evy = ego_.speed * std::sin(ego_.heading);
  const std::size_t shown = std::min(order.size(), kObservedHdvs);
  for (std::size_t k = 0; k < shown; ++k) {
    const Hdv& h = hdvs_[order[k]];
    double* f = obs.data() + 4 + 4 * k;
    f[0] = std::clamp((h.x - ego_.x) / 100.0, -1.0, 1.0);
    f[1] = std::clamp((cfg_.lane_center(h.lane) - ego_.y) / 100.0, -1.0, 1.0);
    f[2] = std::clamp((h.speed - evx) / 30.0, -1.0, 1.0);
    f[3] = std::clamp(-evy / 30.0, -1.0, 1.0);
  }
  return obs;
}

TrafficFrame HighwayEnv::frame() const {
  TrafficFrame f{{ego_.x, ego_.y}, {}};
  f.others.reserve(hdvs_.size());
  for (const Hdv& h : hdvs_) f.others.push_back({h.x, cfg_.lane_center(h.lane)});
  return f;
}

Vector HighwayEnv::lyapunov_state(std::span<const double> obs) const {
  if (obs.size() != obs_dim()) throw std::invalid_argument("highway: observation size mismatch");
  if (cfg_.lyapunov_state == "raw") return Vector(obs.begin(), obs.end());

  Vector z(lyapunov_dim(), 0.0);
  const double lane = std::clamp(obs[1] + 0.5 * cfg_.lanes - 0.5, 0.0, cfg_.lanes - 1.0);
  z[0] = lane - std::round(lane);
  z[1] = obs[3];
  for (std::size_t k = 0; k < kObservedHdvs; ++k) {
    const double* f = obs.data() + 4 + 4 * k;
    if (f[0] == 0.0 && f[1] == 0.0 && f[2] == 0.0 && f[3] == 0.0) continue;  // empty slot
    const double dist = 100.0 * std::hypot(f[0], f[1]);
    z[2 + k] = std::max(0.0, 1.0 - dist / cfg_.hazard_radius);
  }
  return z;
}

}  // namespace sbcq::drivesim
