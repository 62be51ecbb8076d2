#pragma once

#include <limits>
#include <numbers>
#include <span>

#include <json.hpp>

namespace sbcq::drivesim {

struct BicycleParams {
  double front_axle = 2.5;  // centre of mass to front axle, m
  double rear_axle = 2.5;   // centre of mass to rear axle, m
  double width = 2.0;
  double max_steer = std::numbers::pi / 4.0;
  double max_accel = 5.0;
  double dt = 0.1;
  // Speed is clamped to [min_speed, max_speed] after the acceleration update.
  double min_speed = -std::numeric_limits<double>::infinity();
  double max_speed = std::numeric_limits<double>::infinity();

  double length() const { return front_axle + rear_axle; }
  void validate() const;

  friend bool operator==(const BicycleParams&, const BicycleParams&) = default;
};

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;

  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

// Normalised controls; both components are clipped to [-1, 1] before scaling.
struct Action {
  double steer = 0.0;
  double accel = 0.0;

  static Action from(std::span<const double> a);
};

/// Wrap to (-pi, pi].
double wrap_angle(double a);

/// Slip angle at the centre of mass for a steering angle in radians.
double slip_angle(double steer_rad, const BicycleParams& p);

/// One semi-implicit Euler step of the kinematic bicycle model.
VehicleState bicycle_step(const VehicleState& s, const Action& a, const BicycleParams& p);

struct OrientedBox {
  double cx = 0.0;
  double cy = 0.0;
  double heading = 0.0;
  double length = 0.0;  // extent along the heading
  double width = 0.0;
};

OrientedBox footprint(const VehicleState& s, const BicycleParams& p);

/// Separating-axis overlap test on closed rectangles: touching counts as a hit.
bool collision_check(const OrientedBox& a, const OrientedBox& b);

void to_json(nlohmann::json& j, const BicycleParams& p);
void from_json(const nlohmann::json& j, BicycleParams& p);
void to_json(nlohmann::json& j, const OrientedBox& b);
void from_json(const nlohmann::json& j, OrientedBox& b);

}  // namespace sbcq::drivesim
