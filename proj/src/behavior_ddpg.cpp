#include "sbcq/behavior/ddpg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sbcq/core/json_fields.hpp"

namespace sbcq::behavior {

using diffcore::Activation;
using diffcore::DenseNet;
using diffcore::DenseTape;
using nlohmann::json;

void DdpgConfig::validate() const {
  if (hidden.empty()) throw std::invalid_argument("ddpg: need at least one hidden layer");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("ddpg: gamma must lie in (0, 1)");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("ddpg: tau must lie in [0, 1]");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw std::invalid_argument("ddpg: learning rates must be > 0");
  if (noise_std < 0.0) throw std::invalid_argument("ddpg: noise_std must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("ddpg: batch_size must be >= 1");
}

void to_json(json& j, const DdpgConfig& c) {
  j = {{"hidden", c.hidden}, {"actor_lr", c.actor_lr},     {"critic_lr", c.critic_lr},   {"gamma", c.gamma},
       {"tau", c.tau},       {"noise_std", c.noise_std},   {"batch_size", c.batch_size}, {"warmup_steps", c.warmup_steps}};
}

void from_json(const json& j, DdpgConfig& c) {
  require_known_keys(j, {"hidden", "actor_lr", "critic_lr", "gamma", "tau", "noise_std", "batch_size", "warmup_steps"},
                     "ddpg");
  read_field(j, "hidden", c.hidden);
  read_field(j, "actor_lr", c.actor_lr);
  read_field(j, "critic_lr", c.critic_lr);
  read_field(j, "gamma", c.gamma);
  read_field(j, "tau", c.tau);
  read_field(j, "noise_std", c.noise_std);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "warmup_steps", c.warmup_steps);
  c.validate();
}

namespace {

std::vector<std::size_t> layer_sizes(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

}  // namespace

DdpgAgent::DdpgAgent(std::size_t obs_dim, std::size_t act_dim, DdpgConfig cfg, Rng& init) : cfg_(std::move(cfg)) {
  cfg_.validate();
  actor_ = DenseNet::make(layer_sizes(obs_dim, cfg_.hidden, act_dim), Activation::relu(), Activation::tanh(), init);
  critic_ = DenseNet::make(layer_sizes(obs_dim + act_dim, cfg_.hidden, 1), Activation::relu(), Activation::identity(), init);
  target_actor_ = actor_;
  target_critic_ = critic_;
  actor_opt_ = diffcore::AdamState(std::as_const(actor_).parameters(), {.lr = cfg_.actor_lr});
  critic_opt_ = diffcore::AdamState(std::as_const(critic_).parameters(), {.lr = cfg_.critic_lr});
}

Vector DdpgAgent::act(std::span<const double> obs, bool explore, Rng& rng) const {
  if (obs.size() != obs_dim()) throw std::invalid_argument("ddpg: observation size mismatch");
  Vector a = actor_.forward(obs);
  for (double& v : a) {
    if (explore) v += cfg_.noise_std * rng.normal();
    v = std::clamp(v, -1.0, 1.0);
  }
  return a;
}

double DdpgAgent::q_value(std::span<const double> obs, std::span<const double> action) const {
  Vector in(obs.begin(), obs.end());
  in.insert(in.end(), action.begin(), action.end());
  return critic_.forward(in)[0];
}

double DdpgAgent::actor_objective(const Matrix& s) const {
  const Matrix q = critic_.forward(hconcat(s, actor_.forward(s)));
  double sum = 0.0;
  for (double v : q.values()) sum += v;
  return sum / static_cast<double>(s.rows());
}

diffcore::GradBuffer DdpgAgent::actor_objective_grad(const Matrix& s) const {
  DenseTape atape, ctape;
  const Matrix a = actor_.forward(s, &atape);
  critic_.forward(hconcat(s, a), &ctape);
  const Matrix up(s.rows(), 1, 1.0 / static_cast<double>(s.rows()));
  Matrix in_grad;
  critic_.backward(ctape, up, nullptr, &in_grad);
  diffcore::GradBuffer g = actor_.make_grads();
  actor_.backward(atape, column_block(in_grad, s.cols(), act_dim()), &g, nullptr);
  return g;
}

DdpgLosses DdpgAgent::update(const dataset::Minibatch& batch) {
  const std::size_t n = batch.size();
  if (n == 0) throw std::invalid_argument("ddpg: empty minibatch");
  DdpgLosses out;

  // Critic: squared TD error against the target networks.
  const Matrix q_next = target_critic_.forward(hconcat(batch.s2, target_actor_.forward(batch.s2)));
  DenseTape ctape;
  const Matrix q = critic_.forward(hconcat(batch.s, batch.a), &ctape);
  Matrix up(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = batch.r[i] + cfg_.gamma * (1.0 - batch.done[i]) * q_next(i, 0);
    const double err = q(i, 0) - y;
    out.critic += err * err / static_cast<double>(n);
    up(i, 0) = 2.0 * err / static_cast<double>(n);
  }
  auto cg = critic_.make_grads();
  critic_.backward(ctape, up, &cg, nullptr);
  if (!std::isfinite(out.critic) || !adam_step(critic_.parameters(), cg, critic_opt_))
    throw std::runtime_error("ddpg: non-finite critic loss " + std::to_string(out.critic));

  // Actor: ascend mean Q(s, π(s)).
  out.actor = -actor_objective(batch.s);
  auto ag = actor_objective_grad(batch.s);
  diffcore::scale(ag, -1.0);
  if (!std::isfinite(out.actor) || !adam_step(actor_.parameters(), ag, actor_opt_))
    throw std::runtime_error("ddpg: non-finite actor loss " + std::to_string(out.actor));

  soft_update_targets(cfg_.tau);
  return out;
}

void DdpgAgent::soft_update_targets(double tau) {
  diffcore::soft_update(target_actor_.parameters(), std::as_const(actor_).parameters(), tau);
  diffcore::soft_update(target_critic_.parameters(), std::as_const(critic_).parameters(), tau);
}

json DdpgAgent::to_json() const {
  return {{"config", cfg_},
          {"actor", actor_.to_json()},
          {"critic", critic_.to_json()},
          {"target_actor", target_actor_.to_json()},
          {"target_critic", target_critic_.to_json()},
          {"actor_opt", actor_opt_.to_json()},
          {"critic_opt", critic_opt_.to_json()}};
}

DdpgAgent DdpgAgent::from_json(const json& j) {
  DdpgAgent a;
  a.cfg_ = j.at("config").get<DdpgConfig>();
  a.actor_ = DenseNet::from_json(j.at("actor"));
  a.critic_ = DenseNet::from_json(j.at("critic"));
  a.target_actor_ = DenseNet::from_json(j.at("target_actor"));
  a.target_critic_ = DenseNet::from_json(j.at("target_critic"));
  a.actor_opt_ = diffcore::AdamState::from_json(j.at("actor_opt"));
  a.critic_opt_ = diffcore::AdamState::from_json(j.at("critic_opt"));
  return a;
}

OnlineRun::OnlineRun(std::uint64_t seed)
    : env_rng(Rng::derive(seed, 1)), noise_rng(Rng::derive(seed, 2)), batch_rng(Rng::derive(seed, 3)) {}

void online_steps(DdpgAgent& agent, drivesim::Env& env, dataset::BatchDataset& replay, OnlineRun& run,
                  std::size_t steps) {
  const auto& cfg = agent.config();
  for (std::size_t k = 0; k < steps; ++k) {
    if (run.needs_reset) {
      run.obs = env.reset(run.env_rng);
      run.needs_reset = false;
      ++run.episodes;
    }
    Vector a;
    if (run.steps < cfg.warmup_steps) {
      a.resize(agent.act_dim());
      for (double& v : a) v = run.noise_rng.uniform(-1.0, 1.0);
    } else {
      a = agent.act(run.obs, true, run.noise_rng);
    }
    drivesim::StepResult res = env.step(a);
    const bool terminal = res.done && !res.info.truncated;
    replay.append({run.obs, a, res.reward, res.obs, terminal});
    run.obs = std::move(res.obs);
    run.needs_reset = res.done;
    ++run.steps;

    if (run.steps > cfg.warmup_steps && replay.size() >= cfg.batch_size) {
      agent.update(replay.sample_batch(cfg.batch_size, run.batch_rng));
      ++run.updates;
    }
  }
}

dataset::BatchDataset collect(DdpgAgent& agent, drivesim::Env& env, std::size_t steps, std::uint64_t seed) {
  if (steps == 0) throw std::invalid_argument("collect: steps must be >= 1");
  dataset::BatchDataset ds({std::string(env.id()), env.obs_dim(), env.act_dim(), seed});
  OnlineRun run(seed);
  online_steps(agent, env, ds, run, steps);
  return ds;
}

}  // namespace sbcq::behavior
