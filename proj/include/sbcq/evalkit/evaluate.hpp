#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "sbcq/drivesim/env.hpp"

namespace sbcq::evalkit {

/// Maps an observation to an action in [−1, 1]²; the Rng feeds any sampling the policy does.
using Policy = std::function<Vector(std::span<const double> obs, Rng& rng)>;

struct EpisodeRecord {
  double ret = 0.0;  // undiscounted
  double min_distance = std::numeric_limits<double>::infinity();
  bool success = false;
  bool collision = false;
  std::vector<Vector> observations;  // state before each action
  std::vector<Vector> actions;
  std::vector<double> rewards;
  std::vector<double> distances;  // per-step distance to the nearest other vehicle
  std::vector<drivesim::VehicleState> ego;  // ego pose after each step
};

struct EvalRecord {
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  std::vector<EpisodeRecord> episodes;

  double mean_return() const;
  std::vector<double> returns() const;
  std::vector<double> min_distances() const;
};

/// Runs `episodes` rollouts; environment resets draw from a stream derived from `seed`, the policy
/// from a second one, so two calls with the same policy and seed give the same record.
EvalRecord evaluate_policy(const Policy& policy, drivesim::Env& env, std::size_t episodes, std::uint64_t seed);

/// Per step, the smallest centre-to-centre distance from the ego to any other vehicle (+inf when none).
std::vector<double> min_distance_trace(const std::vector<drivesim::TrafficFrame>& frames);

/// Fraction of successful episodes across all records; throws on an empty input.
double success_rate(std::span<const EvalRecord> records);
double success_rate(const EvalRecord& record);

/// Median of the values (mean of the middle pair for even sizes); throws on an empty input.
double median(std::vector<double> values);

/// t, steer, accel, min_distance per step of one episode.
void write_trace_csv(std::ostream& out, const EpisodeRecord& episode);

}  // namespace sbcq::evalkit
