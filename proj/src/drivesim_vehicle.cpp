#include "sbcq/drivesim/vehicle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "sbcq/core/json_fields.hpp"

namespace sbcq::drivesim {

void BicycleParams::validate() const {
  if (!(front_axle > 0.0) || !(rear_axle > 0.0)) throw std::invalid_argument("BicycleParams: axle distances must be > 0");
  if (!(dt > 0.0)) throw std::invalid_argument("BicycleParams: dt must be > 0");
  if (!(width > 0.0)) throw std::invalid_argument("BicycleParams: width must be > 0");
  if (!(max_steer > 0.0) || !(max_accel >= 0.0)) throw std::invalid_argument("BicycleParams: bad control limits");
  if (!(min_speed <= max_speed)) throw std::invalid_argument("BicycleParams: min_speed > max_speed");
}

Action Action::from(std::span<const double> a) {
  if (a.size() != 2) throw std::invalid_argument("Action: expected 2 components");
  return {a[0], a[1]};
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::remainder(a, two_pi);  // [-pi, pi]
  if (w <= -std::numbers::pi) w += two_pi;
  return w;
}

double slip_angle(double steer_rad, const BicycleParams& p) {
  return std::atan(p.rear_axle / (p.front_axle + p.rear_axle) * std::tan(steer_rad));
}

VehicleState bicycle_step(const VehicleState& s, const Action& a, const BicycleParams& p) {
  if (!std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.heading) || !std::isfinite(s.speed) ||
      !std::isfinite(a.steer) || !std::isfinite(a.accel))
    throw std::invalid_argument("bicycle_step: non-finite state or action");
  const double steer = std::clamp(a.steer, -1.0, 1.0) * p.max_steer;
  const double accel = std::clamp(a.accel, -1.0, 1.0) * p.max_accel;
  const double beta = slip_angle(steer, p);

  VehicleState n = s;
  n.speed = std::clamp(s.speed + accel * p.dt, p.min_speed, p.max_speed);
  n.x = s.x + n.speed * std::cos(s.heading + beta) * p.dt;
  n.y = s.y + n.speed * std::sin(s.heading + beta) * p.dt;
  n.heading = wrap_angle(s.heading + n.speed / p.rear_axle * std::sin(beta) * p.dt);
  return n;
}

OrientedBox footprint(const VehicleState& s, const BicycleParams& p) {
  return {s.x, s.y, s.heading, p.length(), p.width};
}

namespace {

struct Projected {
  double lo, hi;
};

std::array<std::array<double, 2>, 4> corners(const OrientedBox& b) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double hl = 0.5 * b.length, hw = 0.5 * b.width;
  std::array<std::array<double, 2>, 4> out;
  const double signs[4][2] = {{1, 1}, {1, -1}, {-1, -1}, {-1, 1}};
  for (int i = 0; i < 4; ++i) {
    const double lx = signs[i][0] * hl, ly = signs[i][1] * hw;
    out[i] = {b.cx + c * lx - s * ly, b.cy + s * lx + c * ly};
  }
  return out;
}

Projected project(const std::array<std::array<double, 2>, 4>& pts, double ax, double ay) {
  Projected p{INFINITY, -INFINITY};
  for (const auto& q : pts) {
    const double d = q[0] * ax + q[1] * ay;
    p.lo = std::min(p.lo, d);
    p.hi = std::max(p.hi, d);
  }
  return p;
}

}  // namespace

bool collision_check(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = corners(a), cb = corners(b);
  const double axes[4][2] = {{std::cos(a.heading), std::sin(a.heading)},
                             {-std::sin(a.heading), std::cos(a.heading)},
                             {std::cos(b.heading), std::sin(b.heading)},
                             {-std::sin(b.heading), std::cos(b.heading)}};
  for (const auto& ax : axes) {
    const Projected pa = project(ca, ax[0], ax[1]);
    const Projected pb = project(cb, ax[0], ax[1]);
    if (pa.hi < pb.lo || pb.hi < pa.lo) return false;
  }
  return true;
}

void to_json(nlohmann::json& j, const BicycleParams& p) {
  j = {{"front_axle", p.front_axle}, {"rear_axle", p.rear_axle}, {"width", p.width},
       {"max_steer", p.max_steer},   {"max_accel", p.max_accel}, {"dt", p.dt},
       {"min_speed", bound_to_json(p.min_speed)}, {"max_speed", bound_to_json(p.max_speed)}};
}

void from_json(const nlohmann::json& j, BicycleParams& p) {
  require_known_keys(j, {"front_axle", "rear_axle", "width", "max_steer", "max_accel", "dt", "min_speed", "max_speed"},
                     "vehicle");
  read_field(j, "front_axle", p.front_axle);
  read_field(j, "rear_axle", p.rear_axle);
  read_field(j, "width", p.width);
  read_field(j, "max_steer", p.max_steer);
  read_field(j, "max_accel", p.max_accel);
  read_field(j, "dt", p.dt);
  read_bound(j, "min_speed", p.min_speed, -INFINITY);
  read_bound(j, "max_speed", p.max_speed, INFINITY);
  p.validate();
}

void to_json(nlohmann::json& j, const OrientedBox& b) {
  j = {{"cx", b.cx}, {"cy", b.cy}, {"heading", b.heading}, {"length", b.length}, {"width", b.width}};
}

void from_json(const nlohmann::json& j, OrientedBox& b) {
  require_known_keys(j, {"cx", "cy", "heading", "length", "width"}, "obstacle");
  read_field(j, "cx", b.cx);
  read_field(j, "cy", b.cy);
  read_field(j, "heading", b.heading);
  read_field(j, "length", b.length);
  read_field(j, "width", b.width);
  if (!(b.length > 0.0) || !(b.width > 0.0)) throw std::invalid_argument("obstacle: extents must be > 0");
}

}  // namespace sbcq::drivesim
