#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "sbcq/diffcore/adam.hpp"
#include "sbcq/diffcore/dense.hpp"
#include "sbcq/diffcore/icnn.hpp"

namespace sbcq::lyapunov {

struct LyapunovConfig {
  std::vector<std::size_t> dynamics_hidden{64, 64};
  std::vector<std::size_t> icnn_hidden{32, 32};
  double alpha = 0.1;    // required decrease rate
  double eps_pd = 1e-3;  // quadratic term that makes V strictly positive away from 0
  double width = 0.1;    // smoothed-ReLU quadratic region
  double dt = 0.1;       // step between consecutive states in the data
  bool risk_on_projected = false;  // decrease term on the projected dynamics instead of the nominal ones
  bool use_anchor = true;
  double anchor_weight = 1.0;
  double lr = 1e-3;

  void validate() const;
  friend bool operator==(const LyapunovConfig&, const LyapunovConfig&) = default;
};

void to_json(nlohmann::json& j, const LyapunovConfig& c);
void from_json(const nlohmann::json& j, LyapunovConfig& c);

struct RiskEval {
  double risk = 0.0;           // mean hinge terms + V(0)^2
  double origin_value = 0.0;   // V(0)
  Vector per_state;            // hinge terms per state
  double active_fraction = 0.0;  // states where the projection changes the dynamics
};

struct PairGrads {
  diffcore::GradBuffer dynamics;
  diffcore::GradBuffer icnn;
};

/// Nominal dynamics network plus a Lyapunov candidate built on an input-convex network.
class LyapunovPair {
 public:
  LyapunovPair() = default;
  LyapunovPair(std::size_t state_dim, LyapunovConfig cfg, Rng& init);
  LyapunovPair(diffcore::DenseNet dynamics, diffcore::IcnnNet g, LyapunovConfig cfg);

  std::size_t state_dim() const { return g_.input_dim(); }
  const LyapunovConfig& config() const { return cfg_; }

  /// V(s) = smoothed_relu(g(s) − g(0)) + eps_pd·‖s‖².
  double value(std::span<const double> s) const;
  Vector values(const Matrix& s) const;
  Vector gradient(std::span<const double> s) const;
  Matrix gradients(const Matrix& s) const;

  Vector nominal(std::span<const double> s) const;
  Matrix nominal(const Matrix& s) const { return dynamics_.forward(s); }

  /// ∇V(s)·f.
  double lie_derivative(std::span<const double> s, std::span<const double> f) const;

  /// Projected dynamics f̄ − ∇V·σ(∇V·f̄ + αV)/‖∇V‖²; f̄ unchanged when ‖∇V‖² < 1e-12.
  Vector stable_dynamics(std::span<const double> s, bool* projected = nullptr) const;
  Matrix stable_dynamics(const Matrix& s, std::vector<bool>* projected = nullptr) const;

  RiskEval risk(const Matrix& states) const;
  /// Returns the risk and accumulates weight·∂risk into `grads`.
  double risk_with_grad(const Matrix& states, double weight, PairGrads& grads) const;

  /// mean ‖s + f̄(s)·dt − s2‖².
  double anchor_loss(const Matrix& s, const Matrix& s2) const;
  double anchor_with_grad(const Matrix& s, const Matrix& s2, double weight, PairGrads& grads) const;

  PairGrads make_grads() const { return {dynamics_.make_grads(), g_.make_grads()}; }
  /// One Adam step on both networks (with the convexity projection). False on non-finite gradients.
  [[nodiscard]] bool apply(const PairGrads& grads);

  diffcore::DenseNet& dynamics() { return dynamics_; }
  diffcore::IcnnNet& icnn() { return g_; }
  const diffcore::DenseNet& dynamics() const { return dynamics_; }
  const diffcore::IcnnNet& icnn() const { return g_; }

  nlohmann::json to_json() const;
  static LyapunovPair from_json(const nlohmann::json& j);

  friend bool operator==(const LyapunovPair& a, const LyapunovPair& b) {
    return a.dynamics_ == b.dynamics_ && a.g_ == b.g_ && a.cfg_ == b.cfg_;
  }

 private:
  struct Forward;
  Forward evaluate(const Matrix& states, bool with_tape) const;
  void init_optimizers();

  LyapunovConfig cfg_;
  diffcore::DenseNet dynamics_;
  diffcore::IcnnNet g_;
  diffcore::AdamState dyn_opt_, icnn_opt_;
};

}  // namespace sbcq::lyapunov
