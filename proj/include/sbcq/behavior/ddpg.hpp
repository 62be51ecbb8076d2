#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "sbcq/dataset/dataset.hpp"
#include "sbcq/diffcore/adam.hpp"
#include "sbcq/diffcore/dense.hpp"
#include "sbcq/drivesim/env.hpp"

namespace sbcq::behavior {

struct DdpgConfig {
  std::vector<std::size_t> hidden{64, 64};
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  double gamma = 0.7;
  double tau = 0.005;
  double noise_std = 0.1;
  std::size_t batch_size = 64;
  std::size_t warmup_steps = 500;

  void validate() const;
  friend bool operator==(const DdpgConfig&, const DdpgConfig&) = default;
};

void to_json(nlohmann::json& j, const DdpgConfig& c);
void from_json(const nlohmann::json& j, DdpgConfig& c);

struct DdpgLosses {
  double critic = 0.0;
  double actor = 0.0;  // −mean Q(s, π(s))
};

class DdpgAgent {
 public:
  DdpgAgent() = default;
  DdpgAgent(std::size_t obs_dim, std::size_t act_dim, DdpgConfig cfg, Rng& init);

  std::size_t obs_dim() const { return actor_.input_dim(); }
  std::size_t act_dim() const { return actor_.output_dim(); }
  const DdpgConfig& config() const { return cfg_; }

  /// Deterministic actor output, plus Gaussian noise when exploring; always clipped to [-1, 1].
  Vector act(std::span<const double> obs, bool explore, Rng& rng) const;
  Matrix act_batch(const Matrix& obs) const { return actor_.forward(obs); }

  double q_value(std::span<const double> obs, std::span<const double> action) const;

  /// One critic step, one actor step, then a soft target update.
  DdpgLosses update(const dataset::Minibatch& batch);

  /// mean Q(s, π(s)) under the online critic, and its gradient with respect to the actor parameters.
  double actor_objective(const Matrix& s) const;
  diffcore::GradBuffer actor_objective_grad(const Matrix& s) const;

  void soft_update_targets(double tau);

  diffcore::DenseNet& actor() { return actor_; }
  diffcore::DenseNet& critic() { return critic_; }
  const diffcore::DenseNet& actor() const { return actor_; }
  const diffcore::DenseNet& critic() const { return critic_; }
  const diffcore::DenseNet& target_actor() const { return target_actor_; }
  const diffcore::DenseNet& target_critic() const { return target_critic_; }

  nlohmann::json to_json() const;
  static DdpgAgent from_json(const nlohmann::json& j);

 private:
  DdpgConfig cfg_;
  diffcore::DenseNet actor_, critic_, target_actor_, target_critic_;
  diffcore::AdamState actor_opt_, critic_opt_;
};

/// Running state of an online learner that persists across calls to online_steps.
struct OnlineRun {
  Vector obs;
  bool needs_reset = true;
  std::size_t steps = 0;
  std::size_t updates = 0;
  std::size_t episodes = 0;
  Rng env_rng, noise_rng, batch_rng;

  explicit OnlineRun(std::uint64_t seed);
};

/// Advance `steps` environment steps: act (uniform random during warm-up), store the
/// transition in `replay`, and train once per step after warm-up.
void online_steps(DdpgAgent& agent, drivesim::Env& env, dataset::BatchDataset& replay, OnlineRun& run,
                  std::size_t steps);

/// Train online for `steps` steps and return every transition seen, as the offline dataset.
dataset::BatchDataset collect(DdpgAgent& agent, drivesim::Env& env, std::size_t steps, std::uint64_t seed);

}  // namespace sbcq::behavior
