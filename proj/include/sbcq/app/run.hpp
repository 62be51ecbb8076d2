#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbcq/behavior/ddpg.hpp"
#include "sbcq/dataset/dataset.hpp"
#include "sbcq/evalkit/evaluate.hpp"
#include "sbcq/safebcq/agent.hpp"

namespace sbcq::app {

/// Algorithms accepted by `train`: the three offline variants plus the online DDPG baseline.
const std::vector<std::string>& algo_ids();

/// Fully resolved description of one training run.
struct RunConfig {
  std::string algo = "safe_bcq";
  std::string env = "parking";
  nlohmann::json env_config = nlohmann::json::object();
  safebcq::TrainConfig train;
  behavior::DdpgConfig ddpg;
  std::string data;  // dataset path (offline algorithms)
  std::string out = "runs/run";
  unsigned jobs = 1;

  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

struct MetricsRow {
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  std::string variant;
  double mean_return = 0.0;
  double success_rate = 0.0;
  double min_distance = 0.0;  // median over the evaluation episodes of each episode's minimum
  std::optional<double> lyapunov_risk;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
  std::vector<evalkit::EvalRecord> evals;  // one per evaluation point
  nlohmann::json checkpoint;               // final model state
};

/// Train one seed and evaluate every `eval_every` epochs. `data` is ignored by ddpg-online.
/// When `dir` is given, the latest checkpoint is written there at every evaluation point.
SeedResult train_seed(const RunConfig& cfg, const dataset::BatchDataset* data, std::uint64_t seed,
                      const std::optional<std::filesystem::path>& dir = std::nullopt);

/// All seeds of `cfg`, fanned out over `cfg.jobs` workers. Writes config.json, metrics.csv and
/// per-seed checkpoints under cfg.out; results are ordered by seed whatever the scheduling.
std::vector<SeedResult> train_all(const RunConfig& cfg, const dataset::BatchDataset* data);

/// Policy view of a checkpoint written by train_seed. `explore` turns on the algorithm's own
/// exploration noise (parameter noise for the noisy variants, Gaussian noise for DDPG).
class LoadedPolicy {
 public:
  static LoadedPolicy from_checkpoint(const nlohmann::json& checkpoint);
  static LoadedPolicy load(const std::filesystem::path& path);

  const std::string& algo() const { return algo_; }
  evalkit::Policy policy(bool explore) const;

 private:
  std::string algo_;
  std::shared_ptr<safebcq::BcqAgent> bcq_;
  std::shared_ptr<behavior::DdpgAgent> ddpg_;
};

/// Evaluation seed for epoch `epoch` of training seed `seed`; distinct points never share episodes.
std::uint64_t eval_seed(std::uint64_t seed, std::size_t epoch);

/// Behaviour dataset: an online DDPG agent initialised from `seed` interacting for `steps` steps.
dataset::BatchDataset collect_dataset(const std::string& env_id, const nlohmann::json& env_config, std::size_t steps,
                                      std::uint64_t seed);

/// Training data preparation for the offline algorithms.
dataset::BatchDataset load_dataset(const std::filesystem::path& path, const std::string& env_id);

}  // namespace sbcq::app
