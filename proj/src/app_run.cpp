#include "sbcq/app/run.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "sbcq/core/json_fields.hpp"
#include "sbcq/core/kernels.hpp"
#include "sbcq/drivesim/env.hpp"
#include "sbcq/lyapunov/pair.hpp"

namespace sbcq::app {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& algo_ids() {
  static const std::vector<std::string> ids{"bcq", "noisy_bcq", "safe_bcq", "ddpg-online"};
  return ids;
}

void RunConfig::validate() const {
  if (std::find(algo_ids().begin(), algo_ids().end(), algo) == algo_ids().end())
    throw std::invalid_argument("unknown algo '" + algo + "' (expected bcq, noisy_bcq, safe_bcq, ddpg-online)");
  const auto& envs = drivesim::env_ids();
  if (std::find(envs.begin(), envs.end(), env) == envs.end())
    throw std::invalid_argument("unknown env '" + env + "' (expected highway, parking)");
  if (jobs == 0) throw std::invalid_argument("jobs must be >= 1");
  if (algo != "ddpg-online" && data.empty()) throw std::invalid_argument("offline algorithms need a dataset path");
  train.validate();
  ddpg.validate();
}

void to_json(json& j, const RunConfig& c) {
  j = {{"algo", c.algo}, {"env", c.env},   {"env_config", c.env_config}, {"train", c.train},
       {"ddpg", c.ddpg}, {"data", c.data}, {"out", c.out},               {"jobs", c.jobs}};
}

void from_json(const json& j, RunConfig& c) {
  require_known_keys(j, {"algo", "env", "env_config", "train", "ddpg", "data", "out", "jobs"}, "run");
  read_field(j, "algo", c.algo);
  read_field(j, "env", c.env);
  if (auto it = j.find("env_config"); it != j.end()) c.env_config.merge_patch(*it);
  if (auto it = j.find("train"); it != j.end()) {
    json merged = c.train;
    merged.merge_patch(*it);
    c.train = merged.get<safebcq::TrainConfig>();
  }
  if (auto it = j.find("ddpg"); it != j.end()) {
    json merged = c.ddpg;
    merged.merge_patch(*it);
    c.ddpg = merged.get<behavior::DdpgConfig>();
  }
  read_field(j, "data", c.data);
  read_field(j, "out", c.out);
  read_field(j, "jobs", c.jobs);
}

namespace {

std::string number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_number(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::runtime_error("metrics: bad number '" + s + "'");
  return v;
}

void write_json(const fs::path& path, const json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << j.dump(1) << '\n';
  }
  fs::rename(tmp, path);
}

}  // namespace

void write_metrics_header(std::ostream& out) { out << "epoch,seed,variant,mean_return,success_rate,min_distance,L_s\n"; }

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  out << r.epoch << ',' << r.seed << ',' << r.variant << ',' << number(r.mean_return) << ',' << number(r.success_rate)
      << ',' << number(r.min_distance) << ',' << (r.lyapunov_risk ? number(*r.lyapunov_risk) : "") << '\n';
}

std::vector<MetricsRow> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() == 6) f.emplace_back();
    if (f.size() != 7) throw std::runtime_error("metrics: expected 7 columns in '" + line + "'");
    MetricsRow r;
    r.epoch = std::stoul(f[0]);
    r.seed = std::stoull(f[1]);
    r.variant = f[2];
    r.mean_return = parse_number(f[3]);
    r.success_rate = parse_number(f[4]);
    r.min_distance = parse_number(f[5]);
    if (!f[6].empty()) r.lyapunov_risk = parse_number(f[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::uint64_t eval_seed(std::uint64_t seed, std::size_t epoch) { return mix64(seed) ^ mix64(0x6576616c00000000ULL + epoch); }

dataset::BatchDataset collect_dataset(const std::string& env_id, const json& env_config, std::size_t steps,
                                      std::uint64_t seed) {
  const auto env = drivesim::make_env(env_id, env_config);
  Rng init = Rng::derive(seed, 31);
  behavior::DdpgAgent agent(env->obs_dim(), env->act_dim(), {}, init);
  return behavior::collect(agent, *env, steps, seed);
}

dataset::BatchDataset load_dataset(const fs::path& path, const std::string& env_id) {
  dataset::BatchDataset ds = dataset::BatchDataset::load(path);
  if (ds.header().env != env_id)
    throw std::runtime_error(path.string() + ": dataset was collected on '" + ds.header().env + "', not '" + env_id + "'");
  if (ds.empty()) throw std::runtime_error(path.string() + ": dataset is empty");
  return ds;
}

SeedResult train_seed(const RunConfig& cfg, const dataset::BatchDataset* data, std::uint64_t seed,
                      const std::optional<fs::path>& dir) {
  cfg.validate();
  const auto env = drivesim::make_env(cfg.env, cfg.env_config);
  const safebcq::TrainConfig& tc = cfg.train;
  SeedResult res;
  res.seed = seed;
  Rng init = Rng::derive(seed, 21);

  std::ofstream progress;
  if (dir) {
    fs::create_directories(*dir);
    progress.open(*dir / "metrics.csv");
    write_metrics_header(progress);
  }

  auto record = [&](std::size_t epoch, const evalkit::Policy& policy, std::optional<double> risk) {
    evalkit::EvalRecord rec = evalkit::evaluate_policy(policy, *env, tc.eval_episodes, eval_seed(seed, epoch));
    rec.epoch = epoch;
    MetricsRow row{epoch, seed, cfg.algo, rec.mean_return(), evalkit::success_rate(rec),
                   evalkit::median(rec.min_distances()), risk};
    if (progress.is_open()) {
      write_metrics_row(progress, row);
      progress.flush();
    }
    res.rows.push_back(std::move(row));
    res.evals.push_back(std::move(rec));
  };
  auto checkpoint = [&](std::size_t epoch, json state) {
    res.checkpoint = {{"algo", cfg.algo}, {"env", cfg.env}, {"seed", seed}, {"epoch", epoch}};
    res.checkpoint.update(state);
    if (dir) write_json(*dir / "checkpoint.json", res.checkpoint);
  };

  if (cfg.algo == "ddpg-online") {
    behavior::DdpgAgent agent(env->obs_dim(), env->act_dim(), cfg.ddpg, init);
    dataset::BatchDataset replay({cfg.env, env->obs_dim(), env->act_dim(), seed});
    behavior::OnlineRun run(seed);
    const auto train_env = drivesim::make_env(cfg.env, cfg.env_config);
    for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
      behavior::online_steps(agent, *train_env, replay, run, 100);
      if (epoch % tc.eval_every != 0) continue;
      record(epoch, [&](std::span<const double> o, Rng& r) { return agent.act(o, false, r); }, std::nullopt);
      checkpoint(epoch, {{"agent", agent.to_json()}});
    }
    return res;
  }

  if (!data) throw std::invalid_argument("train_seed: offline algorithms need a dataset");
  if (data->header().obs_dim != env->obs_dim() || data->header().act_dim != env->act_dim())
    throw std::invalid_argument("train_seed: dataset dimensions do not match the environment");
  safebcq::TrainConfig variant_cfg = tc;
  variant_cfg.variant = safebcq::variant_from_string(cfg.algo);
  safebcq::BcqAgent agent(env->obs_dim(), env->act_dim(), variant_cfg, init, seed);

  std::optional<lyapunov::LyapunovPair> pair;
  safebcq::TrainingData td = safebcq::TrainingData::plain(*data);
  if (variant_cfg.safe()) {
    Rng pair_init = Rng::derive(seed, 23);
    pair.emplace(env->lyapunov_dim(), variant_cfg.lyapunov, pair_init);
    td = safebcq::TrainingData::build(*data, [&](std::span<const double> s) { return env->lyapunov_state(s); });
  }

  Rng rng = Rng::derive(seed, 22);
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const safebcq::EpochDiagnostics d = safebcq::train_epoch(agent, pair ? &*pair : nullptr, td, rng);
    if (epoch % tc.eval_every != 0) continue;
    record(epoch, [&](std::span<const double> o, Rng& r) { return agent.select_action(o, r); }, d.risk);
    json state = {{"agent", agent.to_json()}};
    if (pair) state["pair"] = pair->to_json();
    checkpoint(epoch, std::move(state));
  }
  return res;
}

std::vector<SeedResult> train_all(const RunConfig& cfg, const dataset::BatchDataset* data) {
  cfg.validate();
  const fs::path out(cfg.out);
  fs::create_directories(out);
  write_json(out / "config.json", cfg);

  const auto& seeds = cfg.train.seeds;
  std::vector<SeedResult> results(seeds.size());
  const unsigned workers = std::min<unsigned>(cfg.jobs, static_cast<unsigned>(seeds.size()));
  if (workers > 1) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    kernels::set_num_threads(static_cast<int>(std::max(1u, hw / workers)));
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i; (i = next++) < seeds.size();) {
      try {
        results[i] = train_seed(cfg, data, seeds[i], out / ("seed_" + std::to_string(seeds[i])));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = seeds.size();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);

  std::ofstream metrics(out / "metrics.csv");
  write_metrics_header(metrics);
  for (const auto& r : results)
    for (const auto& row : r.rows) write_metrics_row(metrics, row);
  return results;
}

LoadedPolicy LoadedPolicy::from_checkpoint(const json& checkpoint) {
  LoadedPolicy p;
  p.algo_ = checkpoint.at("algo").get<std::string>();
  if (p.algo_ == "ddpg-online")
    p.ddpg_ = std::make_shared<behavior::DdpgAgent>(behavior::DdpgAgent::from_json(checkpoint.at("agent")));
  else
    p.bcq_ = std::make_shared<safebcq::BcqAgent>(safebcq::BcqAgent::from_json(checkpoint.at("agent")));
  return p;
}

LoadedPolicy LoadedPolicy::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing checkpoint " + path.string());
  return from_checkpoint(json::parse(in));
}

evalkit::Policy LoadedPolicy::policy(bool explore) const {
  if (ddpg_) {
    auto agent = ddpg_;
    return [agent, explore](std::span<const double> o, Rng& r) { return agent->act(o, explore, r); };
  }
  auto agent = bcq_;
  if (explore) return [agent](std::span<const double> o, Rng& r) { return agent->explore_action(o, r); };
  return [agent](std::span<const double> o, Rng& r) { return agent->select_action(o, r); };
}

}  // namespace sbcq::app
