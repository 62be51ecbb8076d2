#pragma once

#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sbcq/core/matrix.hpp"
#include "sbcq/core/rng.hpp"
#include "sbcq/drivesim/vehicle.hpp"

namespace sbcq::drivesim {

struct StepInfo {
  double min_distance = std::numeric_limits<double>::infinity();  // to the nearest other vehicle
  bool success = false;
  bool collision = false;
  bool violation = false;
  bool truncated = false;  // step limit reached without a terminal event
};

struct StepResult {
  Vector obs;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// Positions needed to recompute distances offline.
struct TrafficFrame {
  Point ego;
  std::vector<Point> others;
};

class Env {
 public:
  virtual ~Env() = default;

  virtual std::string_view id() const = 0;
  virtual std::size_t obs_dim() const = 0;
  std::size_t act_dim() const { return 2; }
  virtual int max_steps() const = 0;
  virtual const BicycleParams& vehicle() const = 0;

  virtual Vector reset(Rng& rng) = 0;
  virtual StepResult step(std::span<const double> action) = 0;
  virtual Vector observe() const = 0;
  virtual TrafficFrame frame() const = 0;
  virtual const VehicleState& ego() const = 0;

  /// State fed to the stability certificate; its equilibrium sits at the origin.
  virtual Vector lyapunov_state(std::span<const double> obs) const = 0;
  virtual std::size_t lyapunov_dim() const = 0;

  virtual nlohmann::json config_json() const = 0;

  bool is_done() const { return done_; }
  int steps_taken() const { return steps_; }

 protected:
  void begin_episode() {
    done_ = false;
    steps_ = 0;
    started_ = true;
  }
  void check_steppable() const;

  bool done_ = false;
  bool started_ = false;
  int steps_ = 0;
};

/// "highway" or "parking"; `config` overrides individual defaults.
std::unique_ptr<Env> make_env(std::string_view id, const nlohmann::json& config = nlohmann::json::object());

const std::vector<std::string>& env_ids();

}  // namespace sbcq::drivesim
