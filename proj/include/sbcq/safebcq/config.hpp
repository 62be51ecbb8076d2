#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sbcq/lyapunov/pair.hpp"

namespace sbcq::safebcq {

enum class Variant { bcq, noisy_bcq, safe_bcq };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view name);  // throws std::invalid_argument

struct TrainConfig {
  Variant variant = Variant::safe_bcq;
  double gamma = 0.7;
  double lambda = 0.75;  // weight on the pessimistic twin in the target blend
  double tau = 0.005;
  std::size_t batch_size = 100;
  std::size_t candidates = 10;
  std::size_t epochs = 200;
  std::size_t iterations = 100;  // gradient iterations per epoch
  std::size_t eval_every = 10;
  std::size_t eval_episodes = 5;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  double phi = 0.05;          // perturbation bound per action dimension
  double latent_clip = 0.5;
  bool parameter_noise = true;  // noisy variants resample perturbation noise; false freezes it at zero
  double noise_sigma0 = 0.5;
  double lr = 1e-3;
  double reward_scale = 1.0;  // rewards enter the critic targets multiplied by this
  std::vector<std::size_t> vae_hidden{64, 64};
  std::vector<std::size_t> perturb_hidden{64, 64};
  std::vector<std::size_t> critic_hidden{64, 64};

  double risk_weight = 1.0;
  bool risk_in_target = true;  // also charge the per-state risk of s2 inside the Bellman target
  lyapunov::LyapunovConfig lyapunov;

  void validate() const;
  bool safe() const { return variant == Variant::safe_bcq; }
  bool noisy() const { return variant != Variant::bcq && parameter_noise; }
  std::size_t latent_dim(std::size_t act_dim) const { return 2 * act_dim; }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace sbcq::safebcq
