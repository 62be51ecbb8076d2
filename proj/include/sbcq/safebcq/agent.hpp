#pragma once

#include <functional>
#include <optional>
#include <stdexcept>

#include <json.hpp>

#include "sbcq/dataset/dataset.hpp"
#include "sbcq/diffcore/adam.hpp"
#include "sbcq/lyapunov/pair.hpp"
#include "sbcq/safebcq/config.hpp"
#include "sbcq/safebcq/nets.hpp"

namespace sbcq::safebcq {

/// Thrown when a loss or gradient stops being finite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CriticLosses {
  double bellman = 0.0;  // Σ over the twins of the mean squared TD error
  std::optional<double> risk;
  std::optional<double> anchor;
  double active_fraction = 0.0;
};

struct CriticGrads {
  diffcore::GradBuffer q1, q2;
  std::optional<lyapunov::PairGrads> pair;
};

/// Certificate-space copies of the states that the Lyapunov terms see.
struct CertificateBatch {
  Matrix s, s2;
};

/// Offline data plus the certificate mapping of every transition, computed once.
struct TrainingData {
  const dataset::BatchDataset* data = nullptr;
  Matrix cert_s, cert_s2;  // empty unless a certificate is trained

  using StateMap = std::function<Vector(std::span<const double>)>;
  static TrainingData build(const dataset::BatchDataset& ds, const StateMap& map);
  static TrainingData plain(const dataset::BatchDataset& ds) { return {&ds, {}, {}}; }
  CertificateBatch gather(const std::vector<std::size_t>& indices) const;
};

struct EpochDiagnostics {
  double vae = 0.0;
  double critic = 0.0;
  double perturb = 0.0;  // mean Q1 reached by the perturbed actions
  double mean_target = 0.0;
  std::optional<double> risk;
  std::optional<double> anchor;
  double active_fraction = 0.0;

  friend bool operator==(const EpochDiagnostics&, const EpochDiagnostics&) = default;
};

class BcqAgent {
 public:
  BcqAgent() = default;
  /// Network initialisation draws from `init`; the agent's parameter-noise stream is seeded by `noise_seed`.
  BcqAgent(std::size_t obs_dim, std::size_t act_dim, TrainConfig cfg, Rng& init, std::uint64_t noise_seed);

  const TrainConfig& config() const { return cfg_; }
  std::size_t obs_dim() const { return vae_.obs_dim(); }
  std::size_t act_dim() const { return vae_.act_dim(); }

  /// n candidates per row of `s` (row-major: candidate k of state i at i·n + k). VAE latents come from
  /// `rng`; noisy variants first resample the perturbation noise from the agent's own stream.
  Matrix perturbed_candidates(const Matrix& s, Rng& rng);
  /// Same, with the perturbation evaluated at its mean (noise treated as zero); never mutates the agent.
  Matrix greedy_candidates(const Matrix& s, Rng& rng) const;

  /// argmax of Q1 over each state's n candidates, lowest index on ties.
  std::vector<std::size_t> best_candidates(const Matrix& s, const Matrix& candidates) const;

  /// Greedy action (noise ε = 0).
  Vector select_action(std::span<const double> obs, Rng& rng) const;
  /// Exploratory action: perturbation noise resampled for the noisy variants.
  Vector explore_action(std::span<const double> obs, Rng& rng);

  /// y = scale·r − penalty + γ(1 − done)·max_i[λ·min_j Q'_j + (1 − λ)·max_j Q'_j] over candidates at s2.
  Vector compute_targets(const dataset::Minibatch& batch, Rng& rng, const Vector* penalty = nullptr);

  VaeLoss vae_update(const dataset::Minibatch& batch, Rng& rng);

  /// Bellman loss of both twins plus, for safe_bcq, risk_weight·L_s and the anchor loss.
  CriticLosses critic_loss(const dataset::Minibatch& batch, const Vector& y, const lyapunov::LyapunovPair* pair,
                           const CertificateBatch* cert, CriticGrads* grads) const;
  CriticLosses critic_update(const dataset::Minibatch& batch, const Vector& y, lyapunov::LyapunovPair* pair,
                             const CertificateBatch* cert);

  /// mean Q1(s, clip(a + ξ(s, a))) with the current perturbation noise, and its gradient.
  double perturb_objective(const Matrix& s, const Matrix& a) const;
  diffcore::GradBuffer perturb_objective_grad(const Matrix& s, const Matrix& a) const;
  /// One ascent step on the objective at VAE-sampled actions; returns the objective before the step.
  double perturb_update(const dataset::Minibatch& batch, Rng& rng);

  void soft_update_targets() { critics_.soft_update(cfg_.tau); }

  Vae& vae() { return vae_; }
  PerturbNet& perturb() { return perturb_; }
  CriticEnsemble& critics() { return critics_; }
  const Vae& vae() const { return vae_; }
  const PerturbNet& perturb() const { return perturb_; }
  const CriticEnsemble& critics() const { return critics_; }

  /// Every trainable tensor in a fixed order (VAE, perturbation, online critics, target critics).
  diffcore::ConstParamList parameters() const;

  nlohmann::json to_json() const;
  static BcqAgent from_json(const nlohmann::json& j);

 private:
  void init_optimizers();

  TrainConfig cfg_;
  Vae vae_;
  PerturbNet perturb_;
  CriticEnsemble critics_;
  diffcore::AdamState encoder_opt_, decoder_opt_, perturb_opt_, q1_opt_, q2_opt_;
  Rng noise_rng_;
};

/// One epoch of `iterations` training iterations. `pair` is required for safe_bcq and ignored otherwise.
EpochDiagnostics train_epoch(BcqAgent& agent, lyapunov::LyapunovPair* pair, const TrainingData& data, Rng& rng);

}  // namespace sbcq::safebcq
