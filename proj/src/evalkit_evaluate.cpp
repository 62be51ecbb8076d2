#include "sbcq/evalkit/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace sbcq::evalkit {

double EvalRecord::mean_return() const {
  if (episodes.empty()) throw std::invalid_argument("mean_return: no episodes");
  double s = 0.0;
  for (const auto& e : episodes) s += e.ret;
  return s / static_cast<double>(episodes.size());
}

std::vector<double> EvalRecord::returns() const {
  std::vector<double> r;
  for (const auto& e : episodes) r.push_back(e.ret);
  return r;
}

std::vector<double> EvalRecord::min_distances() const {
  std::vector<double> r;
  for (const auto& e : episodes) r.push_back(e.min_distance);
  return r;
}

EvalRecord evaluate_policy(const Policy& policy, drivesim::Env& env, std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) throw std::invalid_argument("evaluate_policy: episodes must be >= 1");
  Rng env_rng = Rng::derive(seed, 11), policy_rng = Rng::derive(seed, 12);
  EvalRecord rec;
  rec.seed = seed;
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    EpisodeRecord e;
    Vector obs = env.reset(env_rng);
    for (;;) {
      Vector a = policy(obs, policy_rng);
      drivesim::StepResult res = env.step(a);
      e.ret += res.reward;
      e.min_distance = std::min(e.min_distance, res.info.min_distance);
      e.success = e.success || res.info.success;
      e.collision = e.collision || res.info.collision;
      e.observations.push_back(std::move(obs));
      e.actions.push_back(std::move(a));
      e.rewards.push_back(res.reward);
      e.distances.push_back(res.info.min_distance);
      e.ego.push_back(env.ego());
      obs = std::move(res.obs);
      if (res.done) break;
    }
    rec.episodes.push_back(std::move(e));
  }
  return rec;
}

std::vector<double> min_distance_trace(const std::vector<drivesim::TrafficFrame>& frames) {
  std::vector<double> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& o : f.others) best = std::min(best, std::hypot(o.x - f.ego.x, o.y - f.ego.y));
    out.push_back(best);
  }
  return out;
}

double success_rate(std::span<const EvalRecord> records) {
  std::size_t n = 0, ok = 0;
  for (const auto& r : records)
    for (const auto& e : r.episodes) {
      ++n;
      ok += e.success;
    }
  if (n == 0) throw std::invalid_argument("success_rate: no episodes");
  return static_cast<double>(ok) / static_cast<double>(n);
}

double success_rate(const EvalRecord& record) { return success_rate(std::span<const EvalRecord>(&record, 1)); }

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty input");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  const double lo = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

void write_trace_csv(std::ostream& out, const EpisodeRecord& episode) {
  out << "t,steer,accel,min_distance\n";
  for (std::size_t t = 0; t < episode.actions.size(); ++t) {
    out << t << ',' << episode.actions[t][0] << ',' << episode.actions[t][1] << ',';
    if (std::isinf(episode.distances[t]))
      out << "inf";
    else
      out << episode.distances[t];
    out << '\n';
  }
}

}  // namespace sbcq::evalkit
