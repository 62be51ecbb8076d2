#include "sbcq/safebcq/nets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sbcq::safebcq {

using diffcore::Activation;
using diffcore::DenseNet;
using diffcore::DenseTape;
using nlohmann::json;

namespace {

std::vector<std::size_t> layer_sizes(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

Matrix clip_latent(const Matrix& z, double clip) {
  Matrix out = z;
  for (double& v : out.values()) v = std::clamp(v, -clip, clip);
  return out;
}

}  // namespace

double gaussian_kl(std::span<const double> mu, std::span<const double> log_sigma) {
  double kl = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double var = std::exp(2.0 * log_sigma[i]);
    kl += 0.5 * (mu[i] * mu[i] + var - 2.0 * log_sigma[i] - 1.0);
  }
  return kl;
}

Matrix repeat_rows(const Matrix& m, std::size_t times) {
  Matrix out(m.rows() * times, m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t k = 0; k < times; ++k) std::copy(m.row(r).begin(), m.row(r).end(), out.row(r * times + k).begin());
  return out;
}

Vae::Vae(std::size_t obs_dim, std::size_t act_dim, const std::vector<std::size_t>& hidden, double latent_clip,
         Rng& init)
    : latent_clip_(latent_clip) {
  const std::size_t latent = 2 * act_dim;
  encoder_ = DenseNet::make(layer_sizes(obs_dim + act_dim, hidden, 2 * latent), Activation::relu(),
                            Activation::identity(), init);
  decoder_ = DenseNet::make(layer_sizes(obs_dim + latent, hidden, act_dim), Activation::relu(), Activation::tanh(), init);
}

Vae::Vae(DenseNet encoder, DenseNet decoder, double latent_clip)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)), latent_clip_(latent_clip) {
  if (encoder_.output_dim() % 2 != 0) throw std::invalid_argument("vae: encoder output must hold (mu, log sigma)");
  if (decoder_.input_dim() <= latent_dim()) throw std::invalid_argument("vae: decoder input too small");
  if (encoder_.input_dim() != obs_dim() + act_dim()) throw std::invalid_argument("vae: encoder/decoder mismatch");
  if (!(latent_clip_ > 0.0)) throw std::invalid_argument("vae: latent_clip must be > 0");
}

Matrix Vae::decode(const Matrix& s, const Matrix& z) const {
  return decoder_.forward(hconcat(s, clip_latent(z, latent_clip_)));
}

Matrix Vae::sample(const Matrix& s, Rng& rng) const {
  Matrix z(s.rows(), latent_dim());
  for (double& v : z.values()) v = rng.normal();
  return decode(s, z);
}

VaeLoss Vae::loss(const Matrix& s, const Matrix& a, const Matrix& xi, diffcore::GradBuffer* encoder_grads,
                  diffcore::GradBuffer* decoder_grads) const {
  const std::size_t n = s.rows(), L = latent_dim();
  if (n == 0) throw std::invalid_argument("vae: empty minibatch");
  if (a.rows() != n || xi.rows() != n || xi.cols() != L) throw std::invalid_argument("vae: batch shape mismatch");
  const bool grads = encoder_grads || decoder_grads;
  const double inv_n = 1.0 / static_cast<double>(n);

  DenseTape etape, dtape;
  const Matrix stats = encoder_.forward(hconcat(s, a), grads ? &etape : nullptr);
  Matrix z(n, L), log_sigma(n, L);
  VaeLoss out;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < L; ++k) {
      const double mu = stats(r, k);
      const double ls = std::clamp(stats(r, L + k), kMinLogSigma, kMaxLogSigma);
      log_sigma(r, k) = ls;
      z(r, k) = mu + std::exp(ls) * xi(r, k);
    }
    out.kl += gaussian_kl(stats.row(r).subspan(0, L), log_sigma.row(r)) * inv_n;
  }
  const Matrix recon = decoder_.forward(hconcat(s, z), grads ? &dtape : nullptr);
  Matrix d_recon(n, act_dim());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < act_dim(); ++k) {
      const double e = recon(r, k) - a(r, k);
      out.reconstruction += e * e * inv_n;
      d_recon(r, k) = 2.0 * e * inv_n;
    }
  out.total = out.reconstruction + out.kl;
  if (!grads) return out;

  Matrix d_in;
  decoder_.backward(dtape, d_recon, decoder_grads, &d_in);
  if (!encoder_grads) return out;
  Matrix d_stats(n, 2 * L);
  const std::size_t z0 = s.cols();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < L; ++k) {
      const double dz = d_in(r, z0 + k);
      const double mu = stats(r, k), raw = stats(r, L + k), sigma = std::exp(log_sigma(r, k));
      d_stats(r, k) = dz + mu * inv_n;
      const bool inside = raw > kMinLogSigma && raw < kMaxLogSigma;
      d_stats(r, L + k) = inside ? dz * sigma * xi(r, k) + (sigma * sigma - 1.0) * inv_n : 0.0;
    }
  encoder_.backward(etape, d_stats, encoder_grads, nullptr);
  return out;
}

json Vae::to_json() const {
  return {{"encoder", encoder_.to_json()}, {"decoder", decoder_.to_json()}, {"latent_clip", latent_clip_}};
}

Vae Vae::from_json(const json& j) {
  return Vae(DenseNet::from_json(j.at("encoder")), DenseNet::from_json(j.at("decoder")), j.at("latent_clip").get<double>());
}

PerturbNet::PerturbNet(std::size_t obs_dim, std::size_t act_dim, const std::vector<std::size_t>& hidden, double phi,
                       double sigma0, Rng& init)
    : net_(diffcore::NoisyNet::make(layer_sizes(obs_dim + act_dim, hidden, act_dim), Activation::relu(),
                                    Activation::tanh(), init, sigma0)),
      phi_(phi) {
  if (!(phi_ >= 0.0)) throw std::invalid_argument("perturb: phi must be >= 0");
}

PerturbNet::PerturbNet(diffcore::NoisyNet net, double phi) : net_(std::move(net)), phi_(phi) {
  if (!(phi_ >= 0.0)) throw std::invalid_argument("perturb: phi must be >= 0");
  if (net_.layers().back().act != Activation::tanh()) throw std::invalid_argument("perturb: output layer must be tanh");
}

Matrix PerturbNet::forward(const Matrix& s, const Matrix& a, bool with_noise, diffcore::NoisyTape* tape) const {
  Matrix out = net_.forward(hconcat(s, a), tape, with_noise);
  for (double& v : out.values()) v *= phi_;
  return out;
}

void PerturbNet::backward(const diffcore::NoisyTape& tape, const Matrix& upstream, diffcore::GradBuffer& grads) const {
  Matrix scaled = upstream;
  for (double& v : scaled.values()) v *= phi_;
  net_.backward(tape, scaled, &grads, nullptr);
}

json PerturbNet::to_json() const { return {{"net", net_.to_json()}, {"phi", phi_}}; }

PerturbNet PerturbNet::from_json(const json& j) {
  return PerturbNet(diffcore::NoisyNet::from_json(j.at("net")), j.at("phi").get<double>());
}

CriticEnsemble::CriticEnsemble(std::size_t obs_dim, std::size_t act_dim, const std::vector<std::size_t>& hidden,
                               Rng& init) {
  const auto sizes = layer_sizes(obs_dim + act_dim, hidden, 1);
  q1 = DenseNet::make(sizes, Activation::relu(), Activation::identity(), init);
  q2 = DenseNet::make(sizes, Activation::relu(), Activation::identity(), init);
  target1 = q1;
  target2 = q2;
}

void CriticEnsemble::soft_update(double tau) {
  diffcore::soft_update(target1.parameters(), std::as_const(q1).parameters(), tau);
  diffcore::soft_update(target2.parameters(), std::as_const(q2).parameters(), tau);
}

json CriticEnsemble::to_json() const {
  return {{"q1", q1.to_json()}, {"q2", q2.to_json()}, {"target1", target1.to_json()}, {"target2", target2.to_json()}};
}

CriticEnsemble CriticEnsemble::from_json(const json& j) {
  CriticEnsemble c;
  c.q1 = DenseNet::from_json(j.at("q1"));
  c.q2 = DenseNet::from_json(j.at("q2"));
  c.target1 = DenseNet::from_json(j.at("target1"));
  c.target2 = DenseNet::from_json(j.at("target2"));
  return c;
}

}  // namespace sbcq::safebcq
