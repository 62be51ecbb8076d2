#pragma once

#include <string>
#include <vector>

#include "sbcq/drivesim/env.hpp"

namespace sbcq::drivesim {

struct IdmParams {
  double max_accel = 3.0;
  double comfort_decel = 5.0;
  double min_gap = 5.0;       // bumper-to-bumper standstill gap, m
  double time_headway = 1.5;  // s
  double exponent = 4.0;
  double hard_brake = 8.0;    // output clamp on deceleration

  friend bool operator==(const IdmParams&, const IdmParams&) = default;
};

struct HighwayConfig {
  int lanes = 4;
  double lane_width = 4.0;
  int hdv_count = 10;
  double v_min = 20.0;
  double v_max = 30.0;
  double alpha = 0.4;  // speed reward weight
  double beta = 1.0;   // collision penalty
  int max_steps = 300;
  double ego_speed = 25.0;
  double spawn_behind = 40.0;  // HDVs spawn in [-spawn_behind, spawn_ahead] around the ego
  double spawn_ahead = 160.0;
  double spawn_gap = 15.0;     // minimum centre spacing in one lane at spawn
  IdmParams idm;
  BicycleParams vehicle;  // speed bounds are forced to [0, v_max]
  // Certificate state: "hazard" (lane offset, heading, HDV proximities, zero when cruising clear of
  // traffic on a lane centre) or "raw" (the observation itself).
  std::string lyapunov_state = "hazard";
  double hazard_radius = 30.0;  // m; proximity features vanish beyond this distance

  void validate() const;
  double road_width() const { return lanes * lane_width; }
  double lane_center(int lane) const { return (lane + 0.5) * lane_width; }
};

void to_json(nlohmann::json& j, const HighwayConfig& c);
void from_json(const nlohmann::json& j, HighwayConfig& c);

struct Hdv {
  double x = 0.0;
  int lane = 0;
  double speed = 0.0;
  double desired_speed = 0.0;
};

/// Intelligent Driver Model acceleration. `gap` is bumper to bumper; pass +inf for a free road.
double idm_accel(double speed, double desired_speed, double gap, double closing_speed, const IdmParams& p);

class HighwayEnv final : public Env {
 public:
  explicit HighwayEnv(HighwayConfig cfg = {});

  std::string_view id() const override { return "highway"; }
  std::size_t obs_dim() const override { return 4 + 4 * kObservedHdvs; }
  int max_steps() const override { return cfg_.max_steps; }
  const BicycleParams& vehicle() const override { return cfg_.vehicle; }

  Vector reset(Rng& rng) override;
  StepResult step(std::span<const double> action) override;
  Vector observe() const override;
  TrafficFrame frame() const override;
  const VehicleState& ego() const override { return ego_; }

  Vector lyapunov_state(std::span<const double> obs) const override;
  std::size_t lyapunov_dim() const override { return cfg_.lyapunov_state == "raw" ? obs_dim() : 2 + kObservedHdvs; }
  nlohmann::json config_json() const override { return cfg_; }

  const HighwayConfig& config() const { return cfg_; }
  const std::vector<Hdv>& hdvs() const { return hdvs_; }

  // Scenario construction for tests and tooling; starts a fresh episode.
  void set_scene(const VehicleState& ego, std::vector<Hdv> hdvs);

  double speed_reward(double v) const;
  double min_distance() const;
  bool ego_collides() const;
  bool ego_off_road() const;

  static constexpr std::size_t kObservedHdvs = 4;

 private:
  VehicleState hdv_state(const Hdv& h) const;
  std::vector<double> hdv_accels() const;

  HighwayConfig cfg_;
  VehicleState ego_;
  std::vector<Hdv> hdvs_;
};

}  // namespace sbcq::drivesim
