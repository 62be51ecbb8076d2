#pragma once

#include <json.hpp>

#include "sbcq/diffcore/dense.hpp"
#include "sbcq/diffcore/noisy.hpp"

namespace sbcq::safebcq {

/// ½(μ² + σ² − log σ² − 1) summed over one latent vector.
double gaussian_kl(std::span<const double> mu, std::span<const double> log_sigma);

/// Rows of `m`, each repeated `times` times in place.
Matrix repeat_rows(const Matrix& m, std::size_t times);

struct VaeLoss {
  double total = 0.0;
  double reconstruction = 0.0;  // mean over the batch of Σ (a − â)²
  double kl = 0.0;              // mean over the batch of the per-sample KL
};

/// Conditional VAE over actions: encoder (s, a) → (μ, log σ), decoder (s, z) → tanh action.
class Vae {
 public:
  static constexpr double kMinLogSigma = -4.0;
  static constexpr double kMaxLogSigma = 15.0;

  Vae() = default;
  Vae(std::size_t obs_dim, std::size_t act_dim, const std::vector<std::size_t>& hidden, double latent_clip, Rng& init);
  Vae(diffcore::DenseNet encoder, diffcore::DenseNet decoder, double latent_clip);

  std::size_t obs_dim() const { return decoder_.input_dim() - latent_dim(); }
  std::size_t act_dim() const { return decoder_.output_dim(); }
  std::size_t latent_dim() const { return encoder_.output_dim() / 2; }
  double latent_clip() const { return latent_clip_; }

  /// Decoder output for explicit latents (clipped to ±latent_clip first).
  Matrix decode(const Matrix& s, const Matrix& z) const;
  /// z ~ N(0, I), clipped, decoded: one action per row of `s`.
  Matrix sample(const Matrix& s, Rng& rng) const;

  /// Loss with the reparameterisation noise `xi` (standard normal, batch × latent) given explicitly.
  /// Gradients are accumulated when the buffers are non-null.
  VaeLoss loss(const Matrix& s, const Matrix& a, const Matrix& xi, diffcore::GradBuffer* encoder_grads,
               diffcore::GradBuffer* decoder_grads) const;

  diffcore::DenseNet& encoder() { return encoder_; }
  diffcore::DenseNet& decoder() { return decoder_; }
  const diffcore::DenseNet& encoder() const { return encoder_; }
  const diffcore::DenseNet& decoder() const { return decoder_; }

  nlohmann::json to_json() const;
  static Vae from_json(const nlohmann::json& j);
  friend bool operator==(const Vae&, const Vae&) = default;

 private:
  diffcore::DenseNet encoder_, decoder_;
  double latent_clip_ = 0.5;
};

/// Bounded additive correction ξ(s, a) = Φ·tanh(noisy net), so every entry lies in [−Φ, Φ].
class PerturbNet {
 public:
  PerturbNet() = default;
  PerturbNet(std::size_t obs_dim, std::size_t act_dim, const std::vector<std::size_t>& hidden, double phi,
             double sigma0, Rng& init);
  PerturbNet(diffcore::NoisyNet net, double phi);

  double phi() const { return phi_; }
  std::size_t act_dim() const { return net_.output_dim(); }

  Matrix forward(const Matrix& s, const Matrix& a, bool with_noise, diffcore::NoisyTape* tape = nullptr) const;
  /// Gradient through the tape for an upstream gradient with respect to ξ.
  void backward(const diffcore::NoisyTape& tape, const Matrix& upstream, diffcore::GradBuffer& grads) const;

  diffcore::NoisyNet& net() { return net_; }
  const diffcore::NoisyNet& net() const { return net_; }

  nlohmann::json to_json() const;
  static PerturbNet from_json(const nlohmann::json& j);
  friend bool operator==(const PerturbNet&, const PerturbNet&) = default;

 private:
  diffcore::NoisyNet net_;
  double phi_ = 0.05;
};

/// Twin critics Q(s, a) → scalar with their target copies.
struct CriticEnsemble {
  diffcore::DenseNet q1, q2, target1, target2;

  CriticEnsemble() = default;
  CriticEnsemble(std::size_t obs_dim, std::size_t act_dim, const std::vector<std::size_t>& hidden, Rng& init);

  /// target ← τ·online + (1 − τ)·target for both twins.
  void soft_update(double tau);

  nlohmann::json to_json() const;
  static CriticEnsemble from_json(const nlohmann::json& j);
  friend bool operator==(const CriticEnsemble& a, const CriticEnsemble& b) {
    return a.q1 == b.q1 && a.q2 == b.q2 && a.target1 == b.target1 && a.target2 == b.target2;
  }
};

}  // namespace sbcq::safebcq
