#include "sbcq/safebcq/config.hpp"

#include <stdexcept>

#include "sbcq/core/json_fields.hpp"

namespace sbcq::safebcq {

using nlohmann::json;

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::bcq: return "bcq";
    case Variant::noisy_bcq: return "noisy_bcq";
    case Variant::safe_bcq: return "safe_bcq";
  }
  return "?";
}

Variant variant_from_string(std::string_view name) {
  if (name == "bcq") return Variant::bcq;
  if (name == "noisy_bcq") return Variant::noisy_bcq;
  if (name == "safe_bcq") return Variant::safe_bcq;
  throw std::invalid_argument("unknown variant '" + std::string(name) + "' (expected bcq, noisy_bcq, safe_bcq)");
}

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("train: gamma must lie in (0, 1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("train: lambda must lie in [0, 1]");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("train: tau must lie in [0, 1]");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
  if (candidates == 0) throw std::invalid_argument("train: candidates must be >= 1");
  if (iterations == 0) throw std::invalid_argument("train: iterations must be >= 1");
  if (eval_every == 0) throw std::invalid_argument("train: eval_every must be >= 1");
  if (eval_episodes == 0) throw std::invalid_argument("train: eval_episodes must be >= 1");
  if (seeds.empty()) throw std::invalid_argument("train: need at least one seed");
  if (!(phi >= 0.0)) throw std::invalid_argument("train: phi must be >= 0");
  if (!(latent_clip > 0.0)) throw std::invalid_argument("train: latent_clip must be > 0");
  if (!(noise_sigma0 >= 0.0)) throw std::invalid_argument("train: noise_sigma0 must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (!(reward_scale > 0.0)) throw std::invalid_argument("train: reward_scale must be > 0");
  if (!(risk_weight >= 0.0)) throw std::invalid_argument("train: risk_weight must be >= 0");
  if (vae_hidden.empty() || perturb_hidden.empty() || critic_hidden.empty())
    throw std::invalid_argument("train: hidden layer lists must be non-empty");
  lyapunov.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"variant", to_string(c.variant)},
       {"gamma", c.gamma},
       {"lambda", c.lambda},
       {"tau", c.tau},
       {"batch_size", c.batch_size},
       {"candidates", c.candidates},
       {"epochs", c.epochs},
       {"iterations", c.iterations},
       {"eval_every", c.eval_every},
       {"eval_episodes", c.eval_episodes},
       {"seeds", c.seeds},
       {"phi", c.phi},
       {"latent_clip", c.latent_clip},
       {"parameter_noise", c.parameter_noise},
       {"noise_sigma0", c.noise_sigma0},
       {"lr", c.lr},
       {"reward_scale", c.reward_scale},
       {"vae_hidden", c.vae_hidden},
       {"perturb_hidden", c.perturb_hidden},
       {"critic_hidden", c.critic_hidden},
       {"risk_weight", c.risk_weight},
       {"risk_in_target", c.risk_in_target},
       {"lyapunov", c.lyapunov}};
}

void from_json(const json& j, TrainConfig& c) {
  require_known_keys(j,
                     {"variant", "gamma", "lambda", "tau", "batch_size", "candidates", "epochs", "iterations",
                      "eval_every", "eval_episodes", "seeds", "phi", "latent_clip", "parameter_noise", "noise_sigma0",
                      "lr", "reward_scale", "vae_hidden", "perturb_hidden", "critic_hidden", "risk_weight",
                      "risk_in_target", "lyapunov"},
                     "train");
  if (auto it = j.find("variant"); it != j.end()) c.variant = variant_from_string(it->get<std::string>());
  read_field(j, "gamma", c.gamma);
  read_field(j, "lambda", c.lambda);
  read_field(j, "tau", c.tau);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "candidates", c.candidates);
  read_field(j, "epochs", c.epochs);
  read_field(j, "iterations", c.iterations);
  read_field(j, "eval_every", c.eval_every);
  read_field(j, "eval_episodes", c.eval_episodes);
  read_field(j, "seeds", c.seeds);
  read_field(j, "phi", c.phi);
  read_field(j, "latent_clip", c.latent_clip);
  read_field(j, "parameter_noise", c.parameter_noise);
  read_field(j, "noise_sigma0", c.noise_sigma0);
  read_field(j, "lr", c.lr);
  read_field(j, "reward_scale", c.reward_scale);
  read_field(j, "vae_hidden", c.vae_hidden);
  read_field(j, "perturb_hidden", c.perturb_hidden);
  read_field(j, "critic_hidden", c.critic_hidden);
  read_field(j, "risk_weight", c.risk_weight);
  read_field(j, "risk_in_target", c.risk_in_target);
  if (auto it = j.find("lyapunov"); it != j.end()) {
    json merged = c.lyapunov;
    merged.merge_patch(*it);
    c.lyapunov = merged.get<lyapunov::LyapunovConfig>();
  }
  c.validate();
}

}  // namespace sbcq::safebcq
