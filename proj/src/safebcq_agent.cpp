#include "sbcq/safebcq/agent.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sbcq::safebcq {

using diffcore::AdamState;
using diffcore::DenseTape;
using diffcore::GradBuffer;
using nlohmann::json;

namespace {

void append(diffcore::ConstParamList& out, const diffcore::ConstParamList& more) {
  out.insert(out.end(), more.begin(), more.end());
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw TrainingDiverged(std::string(what) + " became non-finite (" + std::to_string(v) + ")");
}

Matrix clip_unit(Matrix m) {
  for (double& v : m.values()) v = std::clamp(v, -1.0, 1.0);
  return m;
}

Matrix rows_of(const Matrix& m, const std::vector<std::size_t>& idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) std::copy(m.row(idx[r]).begin(), m.row(idx[r]).end(), out.row(r).begin());
  return out;
}

}  // namespace

TrainingData TrainingData::build(const dataset::BatchDataset& ds, const StateMap& map) {
  TrainingData td{&ds, {}, {}};
  if (ds.empty()) return td;
  const std::size_t dim = map(ds[0].s).size();
  td.cert_s = Matrix(ds.size(), dim);
  td.cert_s2 = Matrix(ds.size(), dim);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Vector a = map(ds[i].s), b = map(ds[i].s2);
    std::copy(a.begin(), a.end(), td.cert_s.row(i).begin());
    std::copy(b.begin(), b.end(), td.cert_s2.row(i).begin());
  }
  return td;
}

CertificateBatch TrainingData::gather(const std::vector<std::size_t>& indices) const {
  if (cert_s.empty()) throw std::logic_error("training data carries no certificate states");
  return {rows_of(cert_s, indices), rows_of(cert_s2, indices)};
}

BcqAgent::BcqAgent(std::size_t obs_dim, std::size_t act_dim, TrainConfig cfg, Rng& init, std::uint64_t noise_seed)
    : cfg_(std::move(cfg)), noise_rng_(Rng::derive(noise_seed, 0x6e6f697365)) {
  cfg_.validate();
  vae_ = Vae(obs_dim, act_dim, cfg_.vae_hidden, cfg_.latent_clip, init);
  perturb_ = PerturbNet(obs_dim, act_dim, cfg_.perturb_hidden, cfg_.phi, cfg_.noise_sigma0, init);
  critics_ = CriticEnsemble(obs_dim, act_dim, cfg_.critic_hidden, init);
  init_optimizers();
}

void BcqAgent::init_optimizers() {
  const diffcore::AdamConfig adam{.lr = cfg_.lr};
  encoder_opt_ = AdamState(std::as_const(vae_.encoder()).parameters(), adam);
  decoder_opt_ = AdamState(std::as_const(vae_.decoder()).parameters(), adam);
  perturb_opt_ = AdamState(std::as_const(perturb_.net()).parameters(), adam);
  q1_opt_ = AdamState(std::as_const(critics_.q1).parameters(), adam);
  q2_opt_ = AdamState(std::as_const(critics_.q2).parameters(), adam);
}

Matrix BcqAgent::perturbed_candidates(const Matrix& s, Rng& rng) {
  if (cfg_.noisy()) perturb_.net().resample_noise(noise_rng_);
  const Matrix rep = repeat_rows(s, cfg_.candidates);
  const Matrix raw = vae_.sample(rep, rng);
  Matrix out = raw;
  const Matrix xi = perturb_.forward(rep, raw, cfg_.noisy());
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += xi.values()[i];
  return clip_unit(std::move(out));
}

Matrix BcqAgent::greedy_candidates(const Matrix& s, Rng& rng) const {
  const Matrix rep = repeat_rows(s, cfg_.candidates);
  const Matrix raw = vae_.sample(rep, rng);
  Matrix out = raw;
  const Matrix xi = perturb_.forward(rep, raw, false);
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += xi.values()[i];
  return clip_unit(std::move(out));
}

std::vector<std::size_t> BcqAgent::best_candidates(const Matrix& s, const Matrix& candidates) const {
  const std::size_t n = cfg_.candidates;
  if (candidates.rows() != s.rows() * n) throw std::invalid_argument("best_candidates: candidate count mismatch");
  const Matrix q = critics_.q1.forward(hconcat(repeat_rows(s, n), candidates));
  std::vector<std::size_t> best(s.rows(), 0);
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t k = 1; k < n; ++k)
      if (q(i * n + k, 0) > q(i * n + best[i], 0)) best[i] = k;
  return best;
}

Vector BcqAgent::select_action(std::span<const double> obs, Rng& rng) const {
  const Matrix s = Matrix::row_vector(obs);
  const Matrix c = greedy_candidates(s, rng);
  const auto row = c.row(best_candidates(s, c)[0]);
  return Vector(row.begin(), row.end());
}

Vector BcqAgent::explore_action(std::span<const double> obs, Rng& rng) {
  const Matrix s = Matrix::row_vector(obs);
  const Matrix c = perturbed_candidates(s, rng);
  const auto row = c.row(best_candidates(s, c)[0]);
  return Vector(row.begin(), row.end());
}

Vector BcqAgent::compute_targets(const dataset::Minibatch& batch, Rng& rng, const Vector* penalty) {
  const std::size_t N = batch.size(), n = cfg_.candidates;
  if (penalty && penalty->size() != N) throw std::invalid_argument("compute_targets: penalty size mismatch");
  const Matrix cands = perturbed_candidates(batch.s2, rng);
  const Matrix in = hconcat(repeat_rows(batch.s2, n), cands);
  const Matrix t1 = critics_.target1.forward(in), t2 = critics_.target2.forward(in);
  Vector y(N);
  for (std::size_t i = 0; i < N; ++i) {
    double best = -INFINITY;
    for (std::size_t k = 0; k < n; ++k) {
      const double a = t1(i * n + k, 0), b = t2(i * n + k, 0);
      best = std::max(best, cfg_.lambda * std::min(a, b) + (1.0 - cfg_.lambda) * std::max(a, b));
    }
    y[i] = cfg_.reward_scale * batch.r[i] + cfg_.gamma * (1.0 - batch.done[i]) * best;
    if (penalty) y[i] -= (*penalty)[i];
  }
  return y;
}

VaeLoss BcqAgent::vae_update(const dataset::Minibatch& batch, Rng& rng) {
  Matrix xi(batch.size(), vae_.latent_dim());
  for (double& v : xi.values()) v = rng.normal();
  GradBuffer ge = vae_.encoder().make_grads(), gd = vae_.decoder().make_grads();
  const VaeLoss loss = vae_.loss(batch.s, batch.a, xi, &ge, &gd);
  require_finite(loss.total, "vae loss");
  if (!adam_step(vae_.encoder().parameters(), ge, encoder_opt_) || !adam_step(vae_.decoder().parameters(), gd, decoder_opt_))
    throw TrainingDiverged("vae gradient became non-finite");
  return loss;
}

CriticLosses BcqAgent::critic_loss(const dataset::Minibatch& batch, const Vector& y,
                                   const lyapunov::LyapunovPair* pair, const CertificateBatch* cert,
                                   CriticGrads* grads) const {
  const std::size_t N = batch.size();
  if (N == 0) throw std::invalid_argument("critic_loss: empty minibatch");
  if (y.size() != N) throw std::invalid_argument("critic_loss: target size mismatch");
  const double inv_n = 1.0 / static_cast<double>(N);
  const Matrix in = hconcat(batch.s, batch.a);
  CriticLosses out;

  auto twin = [&](const diffcore::DenseNet& q, GradBuffer* g) {
    DenseTape tape;
    const Matrix v = q.forward(in, g ? &tape : nullptr);
    Matrix up(N, 1);
    for (std::size_t i = 0; i < N; ++i) {
      const double e = v(i, 0) - y[i];
      out.bellman += e * e * inv_n;
      up(i, 0) = 2.0 * e * inv_n;
    }
    if (g) q.backward(tape, up, g, nullptr);
  };
  if (grads) {
    grads->q1 = critics_.q1.make_grads();
    grads->q2 = critics_.q2.make_grads();
  }
  twin(critics_.q1, grads ? &grads->q1 : nullptr);
  twin(critics_.q2, grads ? &grads->q2 : nullptr);

  if (!cfg_.safe()) return out;
  if (!pair || !cert) throw std::invalid_argument("critic_loss: safe_bcq needs a Lyapunov pair and certificate states");
  const auto eval = pair->risk(cert->s);
  out.risk = eval.risk;
  out.active_fraction = eval.active_fraction;
  if (grads) {
    grads->pair = pair->make_grads();
    pair->risk_with_grad(cert->s, cfg_.risk_weight, *grads->pair);
  }
  if (pair->config().use_anchor) {
    const double w = pair->config().anchor_weight;
    out.anchor = grads ? pair->anchor_with_grad(cert->s, cert->s2, w, *grads->pair) : pair->anchor_loss(cert->s, cert->s2);
  }
  return out;
}

CriticLosses BcqAgent::critic_update(const dataset::Minibatch& batch, const Vector& y, lyapunov::LyapunovPair* pair,
                                     const CertificateBatch* cert) {
  CriticGrads g;
  const CriticLosses loss = critic_loss(batch, y, pair, cert, &g);
  require_finite(loss.bellman, "critic loss");
  if (loss.risk) require_finite(*loss.risk, "Lyapunov risk");
  if (loss.anchor) require_finite(*loss.anchor, "anchor loss");
  if (!adam_step(critics_.q1.parameters(), g.q1, q1_opt_) || !adam_step(critics_.q2.parameters(), g.q2, q2_opt_))
    throw TrainingDiverged("critic gradient became non-finite");
  if (g.pair && !pair->apply(*g.pair)) throw TrainingDiverged("Lyapunov gradient became non-finite");
  return loss;
}

double BcqAgent::perturb_objective(const Matrix& s, const Matrix& a) const {
  Matrix act = a;
  const Matrix xi = perturb_.forward(s, a, cfg_.noisy());
  for (std::size_t i = 0; i < act.size(); ++i) act.values()[i] += xi.values()[i];
  const Matrix q = critics_.q1.forward(hconcat(s, clip_unit(std::move(act))));
  double sum = 0.0;
  for (double v : q.values()) sum += v;
  return sum / static_cast<double>(s.rows());
}

GradBuffer BcqAgent::perturb_objective_grad(const Matrix& s, const Matrix& a) const {
  const std::size_t N = s.rows();
  diffcore::NoisyTape ptape;
  const Matrix xi = perturb_.forward(s, a, cfg_.noisy(), &ptape);
  Matrix act = a;
  for (std::size_t i = 0; i < act.size(); ++i) act.values()[i] += xi.values()[i];
  const Matrix clipped = clip_unit(act);

  DenseTape qtape;
  critics_.q1.forward(hconcat(s, clipped), &qtape);
  Matrix d_in;
  critics_.q1.backward(qtape, Matrix(N, 1, 1.0 / static_cast<double>(N)), nullptr, &d_in);
  Matrix d_xi = column_block(d_in, s.cols(), act_dim());
  for (std::size_t i = 0; i < d_xi.size(); ++i)
    if (std::abs(act.values()[i]) > 1.0) d_xi.values()[i] = 0.0;  // clipped entries pass no gradient
  GradBuffer g = perturb_.net().make_grads();
  perturb_.backward(ptape, d_xi, g);
  return g;
}

double BcqAgent::perturb_update(const dataset::Minibatch& batch, Rng& rng) {
  if (batch.size() == 0) throw std::invalid_argument("perturb_update: empty minibatch");
  const Matrix a = vae_.sample(batch.s, rng);
  const double objective = perturb_objective(batch.s, a);
  require_finite(objective, "perturbation objective");
  GradBuffer g = perturb_objective_grad(batch.s, a);
  diffcore::scale(g, -1.0);
  if (!adam_step(perturb_.net().parameters(), g, perturb_opt_))
    throw TrainingDiverged("perturbation gradient became non-finite");
  return objective;
}

diffcore::ConstParamList BcqAgent::parameters() const {
  diffcore::ConstParamList all;
  append(all, vae_.encoder().parameters());
  append(all, vae_.decoder().parameters());
  append(all, perturb_.net().parameters());
  append(all, critics_.q1.parameters());
  append(all, critics_.q2.parameters());
  append(all, critics_.target1.parameters());
  append(all, critics_.target2.parameters());
  return all;
}

json BcqAgent::to_json() const {
  return {{"config", cfg_},
          {"vae", vae_.to_json()},
          {"perturb", perturb_.to_json()},
          {"critics", critics_.to_json()},
          {"optimizers",
           {{"encoder", encoder_opt_.to_json()},
            {"decoder", decoder_opt_.to_json()},
            {"perturb", perturb_opt_.to_json()},
            {"q1", q1_opt_.to_json()},
            {"q2", q2_opt_.to_json()}}},
          {"noise_rng", noise_rng_.state()}};
}

BcqAgent BcqAgent::from_json(const json& j) {
  BcqAgent a;
  a.cfg_ = j.at("config").get<TrainConfig>();
  a.vae_ = Vae::from_json(j.at("vae"));
  a.perturb_ = PerturbNet::from_json(j.at("perturb"));
  a.critics_ = CriticEnsemble::from_json(j.at("critics"));
  const json& o = j.at("optimizers");
  a.encoder_opt_ = AdamState::from_json(o.at("encoder"));
  a.decoder_opt_ = AdamState::from_json(o.at("decoder"));
  a.perturb_opt_ = AdamState::from_json(o.at("perturb"));
  a.q1_opt_ = AdamState::from_json(o.at("q1"));
  a.q2_opt_ = AdamState::from_json(o.at("q2"));
  a.noise_rng_.set_state(j.at("noise_rng").get<std::string>());
  return a;
}

EpochDiagnostics train_epoch(BcqAgent& agent, lyapunov::LyapunovPair* pair, const TrainingData& data, Rng& rng) {
  const TrainConfig& cfg = agent.config();
  if (!data.data || data.data->empty()) throw std::invalid_argument("train_epoch: empty dataset");
  if (cfg.safe() && !pair) throw std::invalid_argument("train_epoch: safe_bcq needs a Lyapunov pair");
  const double k = 1.0 / static_cast<double>(cfg.iterations);

  EpochDiagnostics d;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto idx = data.data->sample_indices(cfg.batch_size, rng);
    const dataset::Minibatch batch = data.data->gather(idx);
    d.vae += agent.vae_update(batch, rng).total * k;

    std::optional<CertificateBatch> cert;
    std::optional<Vector> penalty;
    if (cfg.safe()) {
      cert = data.gather(idx);
      if (cfg.risk_in_target && cfg.risk_weight > 0.0) {
        penalty = pair->risk(cert->s2).per_state;
        for (double& v : *penalty) v *= cfg.risk_weight;
      }
    }
    const Vector y = agent.compute_targets(batch, rng, penalty ? &*penalty : nullptr);
    for (double v : y) d.mean_target += v * k / static_cast<double>(y.size());

    const CriticLosses c = agent.critic_update(batch, y, pair, cert ? &*cert : nullptr);
    d.critic += c.bellman * k;
    if (c.risk) d.risk = d.risk.value_or(0.0) + *c.risk * k;
    if (c.anchor) d.anchor = d.anchor.value_or(0.0) + *c.anchor * k;
    d.active_fraction += c.active_fraction * k;

    d.perturb += agent.perturb_update(batch, rng) * k;
    agent.soft_update_targets();
  }
  return d;
}

}  // namespace sbcq::safebcq
