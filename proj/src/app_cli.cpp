#include "sbcq/app/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "sbcq/app/run.hpp"
#include "sbcq/behavior/ddpg.hpp"
#include "sbcq/drivesim/env.hpp"
#include "sbcq/evalkit/density.hpp"

namespace sbcq::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Thrown for bad flags or configuration values; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError(path + ": " + e.what());
  }
}

// Leaf paths of a JSON object, dotted ("train.lyapunov.alpha").
void leaf_paths(const json& j, const std::string& prefix, std::vector<std::string>& out) {
  if (!j.is_object() || j.empty()) {
    out.push_back(prefix);
    return;
  }
  for (const auto& [k, v] : j.items()) leaf_paths(v, prefix.empty() ? k : prefix + "." + k, out);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = std::string::npos;
    }
    if (used != item.size() || item.empty() || item[0] == '-') throw UsageError("bad seed '" + item + "'");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw UsageError("empty seed list");
  return seeds;
}

// Layered configuration: defaults, then a config file, then SBCQ_* variables, then flags.
class Resolver {
 public:
  void layer(const json& patch, const std::string& source) {
    json merged = cfg_;
    merged.merge_patch(patch);
    try {
      cfg_ = merged.get<RunConfig>();
    } catch (const std::exception& e) {
      throw UsageError(std::string(source) + ": " + e.what());
    }
    std::vector<std::string> paths;
    leaf_paths(patch, "", paths);
    for (const auto& p : paths) provenance_[p] = source;
  }

  const RunConfig& config() const { return cfg_; }
  json provenance() const {
    json out = json::object();
    std::vector<std::string> paths;
    leaf_paths(json(cfg_), "", paths);
    for (const auto& p : paths) {
      auto it = provenance_.find(p);
      out[p] = it == provenance_.end() ? "default" : it->second;
    }
    return out;
  }

 private:
  RunConfig cfg_;
  std::map<std::string, std::string> provenance_;
};

json environment_patch() {
  json patch = json::object();
  auto get = [](const char* name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name); v && *v) return std::string(v);
    return std::nullopt;
  };
  auto number = [](const std::string& name, const std::string& v) {
    try {
      std::size_t used = 0;
      const auto n = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      throw UsageError(name + ": expected a non-negative integer, got '" + v + "'");
    }
  };
  if (auto v = get("SBCQ_ALGO")) patch["algo"] = *v;
  if (auto v = get("SBCQ_ENV")) patch["env"] = *v;
  if (auto v = get("SBCQ_DATA")) patch["data"] = *v;
  if (auto v = get("SBCQ_OUT")) patch["out"] = *v;
  if (auto v = get("SBCQ_JOBS")) patch["jobs"] = number("SBCQ_JOBS", *v);
  if (auto v = get("SBCQ_EPOCHS")) patch["train"]["epochs"] = number("SBCQ_EPOCHS", *v);
  if (auto v = get("SBCQ_EVAL_EVERY")) patch["train"]["eval_every"] = number("SBCQ_EVAL_EVERY", *v);
  if (auto v = get("SBCQ_EPISODES")) patch["train"]["eval_episodes"] = number("SBCQ_EPISODES", *v);
  if (auto v = get("SBCQ_SEEDS")) patch["train"]["seeds"] = parse_seed_list(*v);
  return patch;
}

std::vector<fs::path> seed_dirs(const fs::path& run) {
  if (!fs::is_directory(run)) throw std::runtime_error("missing run directory " + run.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(run))
    if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end(), [](const fs::path& a, const fs::path& b) {
    return std::stoull(a.filename().string().substr(5)) < std::stoull(b.filename().string().substr(5));
  });
  if (dirs.empty()) throw std::runtime_error("no seed_* directories under " + run.string());
  return dirs;
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

RunConfig run_config_of(const fs::path& run) {
  const fs::path p = run / "config.json";
  if (!fs::exists(p)) throw std::runtime_error("missing " + p.string());
  std::ifstream in(p);
  return json::parse(in).get<RunConfig>();
}

// Observation and action rows for the density grid.
struct Pairs {
  Matrix states, actions;
};

Pairs pairs_from_dataset(const dataset::BatchDataset& ds) {
  Pairs p{Matrix(ds.size(), ds.header().obs_dim), Matrix(ds.size(), ds.header().act_dim)};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::copy(ds[i].s.begin(), ds[i].s.end(), p.states.row(i).begin());
    std::copy(ds[i].a.begin(), ds[i].a.end(), p.actions.row(i).begin());
  }
  return p;
}

Vector scores_of(const Matrix& m) {
  if (m.rows() < 2) return Vector(m.rows(), 0.0);
  return evalkit::pca_1d(m).scores;
}

struct Context {
  std::ostream& out;
  std::ostream& err;
};

int cmd_collect(Context& ctx, const std::string& env_id, const std::string& env_config, std::size_t steps,
                std::uint64_t seed, const std::string& out_path) {
  if (steps == 0) throw UsageError("--steps must be >= 1");
  const json cfg = env_config.empty() ? json::object() : read_json_file(env_config);
  dataset::BatchDataset ds;
  try {
    ds = collect_dataset(env_id, cfg, steps, seed);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (const auto parent = fs::path(out_path).parent_path(); !parent.empty()) fs::create_directories(parent);
  ds.save(out_path);
  ctx.out << "collected " << ds.size() << " transitions on " << env_id << " (mean reward " << fmt(ds.mean_reward())
          << ", terminal " << ds.terminal_count() << ") -> " << out_path << '\n';
  return kOk;
}

int cmd_train(Context& ctx, const Resolver& resolver) {
  RunConfig cfg = resolver.config();
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::optional<dataset::BatchDataset> data;
  if (cfg.algo != "ddpg-online") data = load_dataset(cfg.data, cfg.env);
  const auto results = train_all(cfg, data ? &*data : nullptr);
  {
    std::ofstream prov(fs::path(cfg.out) / "provenance.json");
    prov << resolver.provenance().dump(1) << '\n';
  }
  for (const auto& r : results) {
    if (r.rows.empty()) continue;
    const auto& last = r.rows.back();
    ctx.out << cfg.algo << " seed " << r.seed << ": epoch " << last.epoch << " return " << fmt(last.mean_return)
            << " success " << fmt(last.success_rate) << " min_distance " << fmt(last.min_distance) << '\n';
  }
  ctx.out << "wrote " << (fs::path(cfg.out) / "metrics.csv").string() << '\n';
  return kOk;
}

int cmd_evaluate(Context& ctx, const std::string& run, std::size_t episodes, std::uint64_t seed, bool explore,
                 const std::string& out_dir) {
  if (episodes == 0) throw UsageError("--episodes must be >= 1");
  const RunConfig cfg = run_config_of(run);
  const fs::path out = out_dir.empty() ? fs::path(run) / "evaluation" : fs::path(out_dir);
  fs::create_directories(out / "traces");
  std::ofstream csv(out / "evaluation.csv");
  csv << "seed,episode,return,success,min_distance,steps\n";
  for (const auto& dir : seed_dirs(run)) {
    const auto policy = LoadedPolicy::load(dir / "checkpoint.json");
    const auto env = drivesim::make_env(cfg.env, cfg.env_config);
    const std::uint64_t train_seed = std::stoull(dir.filename().string().substr(5));
    const auto rec = evalkit::evaluate_policy(policy.policy(explore), *env, episodes, mix64(train_seed) ^ mix64(seed));
    for (std::size_t e = 0; e < rec.episodes.size(); ++e) {
      const auto& ep = rec.episodes[e];
      csv << train_seed << ',' << e << ',' << fmt(ep.ret) << ',' << ep.success << ',' << fmt(ep.min_distance) << ','
          << ep.actions.size() << '\n';
      std::ofstream trace(out / "traces" / ("seed_" + std::to_string(train_seed) + "_episode_" + std::to_string(e) + ".csv"));
      evalkit::write_trace_csv(trace, ep);
    }
    ctx.out << "seed " << train_seed << ": mean return " << fmt(rec.mean_return()) << ", success "
            << fmt(evalkit::success_rate(rec)) << '\n';
  }
  ctx.out << "wrote " << (out / "evaluation.csv").string() << '\n';
  return kOk;
}

int cmd_density(Context& ctx, const std::string& data_path, const std::string& run, std::size_t episodes,
                std::size_t bins, const std::string& out_path) {
  if (data_path.empty() == run.empty()) throw UsageError("give exactly one of --data or --run");
  if (bins == 0) throw UsageError("--bins must be >= 1");
  Pairs pairs;
  if (!data_path.empty()) {
    pairs = pairs_from_dataset(dataset::BatchDataset::load(data_path));
  } else {
    const RunConfig cfg = run_config_of(run);
    std::vector<Vector> obs, act;
    for (const auto& dir : seed_dirs(run)) {
      const auto policy = LoadedPolicy::load(dir / "checkpoint.json");
      const auto env = drivesim::make_env(cfg.env, cfg.env_config);
      const auto rec = evalkit::evaluate_policy(policy.policy(true), *env, episodes, 0);
      for (const auto& ep : rec.episodes) {
        obs.insert(obs.end(), ep.observations.begin(), ep.observations.end());
        act.insert(act.end(), ep.actions.begin(), ep.actions.end());
      }
    }
    pairs.states = Matrix(obs.size(), obs.empty() ? 0 : obs[0].size());
    pairs.actions = Matrix(act.size(), act.empty() ? 0 : act[0].size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
      std::copy(obs[i].begin(), obs[i].end(), pairs.states.row(i).begin());
      std::copy(act[i].begin(), act[i].end(), pairs.actions.row(i).begin());
    }
  }
  const auto grid = evalkit::density_grid(scores_of(pairs.states), scores_of(pairs.actions), bins);
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  evalkit::write_density_csv(out, grid);
  std::size_t populated = 0;
  for (double c : grid.counts.values()) populated += c > 0.0;
  ctx.out << "density grid " << bins << "x" << bins << " over " << pairs.states.rows() << " pairs, " << populated
          << " populated cells -> " << out_path << '\n';
  return kOk;
}

int cmd_report(Context& ctx, const std::vector<std::string>& runs, const std::string& out_path) {
  struct Group {
    std::vector<double> returns, success, distance;
  };
  std::map<std::string, Group> groups;
  std::vector<std::string> order;
  for (const auto& run : runs) {
    const auto rows = read_metrics(fs::path(run) / "metrics.csv");
    std::map<std::uint64_t, const MetricsRow*> final_rows;
    for (const auto& r : rows)
      if (!final_rows.count(r.seed) || final_rows[r.seed]->epoch < r.epoch) final_rows[r.seed] = &r;
    for (const auto& [seed, r] : final_rows) {
      if (!groups.count(r->variant)) order.push_back(r->variant);
      auto& g = groups[r->variant];
      g.returns.push_back(r->mean_return);
      g.success.push_back(r->success_rate);
      g.distance.push_back(r->min_distance);
    }
  }
  if (order.empty()) throw std::runtime_error("report: no metrics rows found");

  std::ostringstream table;
  table << "algo,seeds,final_return_mean,final_return_std,success_rate,median_min_distance\n";
  for (const auto& algo : order) {
    const auto& g = groups[algo];
    const double n = static_cast<double>(g.returns.size());
    const double mean = std::accumulate(g.returns.begin(), g.returns.end(), 0.0) / n;
    double var = 0.0;
    for (double v : g.returns) var += (v - mean) * (v - mean) / n;
    const double success = std::accumulate(g.success.begin(), g.success.end(), 0.0) / n;
    table << algo << ',' << g.returns.size() << ',' << fmt(mean) << ',' << fmt(std::sqrt(var)) << ',' << fmt(success)
          << ',' << fmt(evalkit::median(g.distance)) << '\n';
  }
  ctx.out << table.str();
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << table.str();
  }
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Offline driving policies with batch-constrained Q-learning, parameter noise and a Lyapunov risk"};
  app.require_subcommand(1);
  Context ctx{out, err};

  std::string env_id = "parking", env_config, out_path;
  std::size_t steps = 5000;
  std::uint64_t seed = 0;
  auto* collect = app.add_subcommand("collect", "Collect a behaviour dataset with an online DDPG agent");
  collect->add_option("--env", env_id, "highway or parking")->capture_default_str();
  collect->add_option("--env-config", env_config, "JSON file with environment overrides");
  collect->add_option("--steps", steps, "Environment steps")->capture_default_str();
  collect->add_option("--seed", seed, "Random seed")->capture_default_str();
  collect->add_option("--out", out_path, "Dataset path (JSON Lines)")->required();

  std::string config_file, algo, data, train_out, seeds_text, train_env;
  std::size_t epochs = 0, eval_every = 0, eval_episodes = 0;
  unsigned jobs = 0;
  auto* train = app.add_subcommand("train", "Train one algorithm over several seeds");
  train->add_option("--config", config_file, "JSON run configuration");
  auto* o_algo = train->add_option("--algo", algo, "bcq, noisy_bcq, safe_bcq or ddpg-online");
  auto* o_env = train->add_option("--env", train_env, "highway or parking");
  auto* o_data = train->add_option("--data", data, "Dataset from `collect`");
  auto* o_epochs = train->add_option("--epochs", epochs, "Training epochs (default 200)");
  auto* o_eval = train->add_option("--eval-every", eval_every, "Epochs between evaluations (default 10)");
  auto* o_episodes = train->add_option("--episodes", eval_episodes, "Episodes per evaluation (default 5)");
  auto* o_seeds = train->add_option("--seeds", seeds_text, "Comma-separated seeds (default 0,1,2,3,4)");
  auto* o_out = train->add_option("--out", train_out, "Run directory");
  auto* o_jobs = train->add_option("--jobs", jobs, "Seeds trained in parallel (default 1)");

  std::string run_dir, eval_out;
  std::size_t episodes = 5;
  bool explore = false;
  auto* evaluate = app.add_subcommand("evaluate", "Roll out the checkpoints of a run");
  evaluate->add_option("--run", run_dir, "Run directory")->required();
  evaluate->add_option("--episodes", episodes, "Episodes per seed")->capture_default_str();
  evaluate->add_option("--seed", seed, "Evaluation seed")->capture_default_str();
  evaluate->add_flag("--explore", explore, "Keep the algorithm's exploration noise on");
  evaluate->add_option("--out", eval_out, "Output directory (default RUN/evaluation)");

  std::string density_data, density_run, density_out;
  std::size_t bins = 50, density_episodes = 5;
  auto* density = app.add_subcommand("density", "State-action density grid on first principal components");
  density->add_option("--data", density_data, "Dataset or transition log");
  density->add_option("--run", density_run, "Run directory (exploration rollouts of every seed)");
  density->add_option("--episodes", density_episodes, "Rollouts per seed with --run")->capture_default_str();
  density->add_option("--bins", bins, "Cells per axis")->capture_default_str();
  density->add_option("--out", density_out, "Grid CSV")->required();

  std::vector<std::string> report_runs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Summary table across run directories");
  report->add_option("runs", report_runs, "Run directories")->required();
  report->add_option("--out", report_out, "Also write the table here");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsageError;
  }

  try {
    if (collect->parsed()) return cmd_collect(ctx, env_id, env_config, steps, seed, out_path);
    if (train->parsed()) {
      Resolver resolver;
      if (!config_file.empty()) resolver.layer(read_json_file(config_file), "file");
      resolver.layer(environment_patch(), "env");
      json flags = json::object();
      if (o_algo->count()) flags["algo"] = algo;
      if (o_env->count()) flags["env"] = train_env;
      if (o_data->count()) flags["data"] = data;
      if (o_out->count()) flags["out"] = train_out;
      if (o_jobs->count()) flags["jobs"] = jobs;
      if (o_epochs->count()) flags["train"]["epochs"] = epochs;
      if (o_eval->count()) flags["train"]["eval_every"] = eval_every;
      if (o_episodes->count()) flags["train"]["eval_episodes"] = eval_episodes;
      if (o_seeds->count()) flags["train"]["seeds"] = parse_seed_list(seeds_text);
      resolver.layer(flags, "flag");
      return cmd_train(ctx, resolver);
    }
    if (evaluate->parsed()) return cmd_evaluate(ctx, run_dir, episodes, seed, explore, eval_out);
    if (density->parsed()) return cmd_density(ctx, density_data, density_run, density_episodes, bins, density_out);
    if (report->parsed()) return cmd_report(ctx, report_runs, report_out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kUsageError;
}

}  // namespace sbcq::app
