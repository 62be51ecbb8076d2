#pragma once

#include <array>
#include <vector>

#include "sbcq/drivesim/env.hpp"

namespace sbcq::drivesim {

struct ParkingConfig {
  double arena_length = 40.0;  // x extent, centred on the origin
  double arena_width = 25.0;   // y extent
  double goal_x = 0.0;
  double goal_y = 8.5;
  double goal_heading = std::numbers::pi / 2.0;
  std::vector<OrientedBox> obstacles;  // walls are added on top of these
  double alpha = 1.0;  // goal-error weight
  double beta = 5.0;   // obstacle penalty
  int max_steps = 100;
  double success_position = 0.5;
  double success_heading = 0.2;
  double spawn_x_lo = -6.0, spawn_x_hi = 6.0;
  double spawn_y_lo = -6.0, spawn_y_hi = -2.0;
  double position_scale = 20.0;  // observation scaling only
  double velocity_scale = 5.0;
  BicycleParams vehicle = default_vehicle();

  static BicycleParams default_vehicle();
  static std::vector<OrientedBox> default_obstacles();
  static ParkingConfig defaults();

  void validate() const;
  std::vector<OrientedBox> walls() const;
};

void to_json(nlohmann::json& j, const ParkingConfig& c);
void from_json(const nlohmann::json& j, ParkingConfig& c);

class ParkingEnv final : public Env {
 public:
  using State6 = std::array<double, 6>;

  explicit ParkingEnv(ParkingConfig cfg = ParkingConfig::defaults());

  std::string_view id() const override { return "parking"; }
  std::size_t obs_dim() const override { return 12; }
  int max_steps() const override { return cfg_.max_steps; }
  const BicycleParams& vehicle() const override { return cfg_.vehicle; }

  Vector reset(Rng& rng) override;
  StepResult step(std::span<const double> action) override;
  Vector observe() const override;
  TrafficFrame frame() const override;
  const VehicleState& ego() const override { return ego_; }

  Vector lyapunov_state(std::span<const double> obs) const override;
  std::size_t lyapunov_dim() const override { return 6; }
  nlohmann::json config_json() const override { return cfg_; }

  const ParkingConfig& config() const { return cfg_; }
  const std::vector<OrientedBox>& all_obstacles() const { return obstacles_; }

  /// Starts a fresh episode with the ego at `s`.
  void set_ego(const VehicleState& s);

  /// [x, y, vx, vy, cos, sin] in metres and m/s.
  static State6 physical_state(const VehicleState& s);
  State6 goal_state() const;
  double reward(const VehicleState& s, bool violation) const;
  bool in_violation(const VehicleState& s) const;
  bool at_goal(const VehicleState& s) const;

 private:
  ParkingConfig cfg_;
  std::vector<OrientedBox> obstacles_;
  VehicleState ego_;
};

}  // namespace sbcq::drivesim
