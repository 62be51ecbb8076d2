#include "sbcq/lyapunov/pair.hpp"

#include <cmath>
#include <stdexcept>

#include "sbcq/core/json_fields.hpp"
#include "sbcq/diffcore/activation.hpp"

namespace sbcq::lyapunov {

using diffcore::smoothed_relu;
using diffcore::smoothed_relu_grad;
using diffcore::smoothed_relu_grad2;
using nlohmann::json;

namespace {

constexpr double kFlatGradient = 1e-12;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<std::size_t> layer_sizes(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

}  // namespace

void LyapunovConfig::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("lyapunov: alpha must be > 0");
  if (!(eps_pd > 0.0)) throw std::invalid_argument("lyapunov: eps_pd must be > 0");
  if (!(width > 0.0)) throw std::invalid_argument("lyapunov: width must be > 0");
  if (!(dt > 0.0)) throw std::invalid_argument("lyapunov: dt must be > 0");
  if (!(lr > 0.0)) throw std::invalid_argument("lyapunov: lr must be > 0");
  if (anchor_weight < 0.0) throw std::invalid_argument("lyapunov: anchor_weight must be >= 0");
  if (dynamics_hidden.empty() || icnn_hidden.empty()) throw std::invalid_argument("lyapunov: empty hidden sizes");
}

void to_json(json& j, const LyapunovConfig& c) {
  j = {{"dynamics_hidden", c.dynamics_hidden},
       {"icnn_hidden", c.icnn_hidden},
       {"alpha", c.alpha},
       {"eps_pd", c.eps_pd},
       {"width", c.width},
       {"dt", c.dt},
       {"risk_on_projected", c.risk_on_projected},
       {"use_anchor", c.use_anchor},
       {"anchor_weight", c.anchor_weight},
       {"lr", c.lr}};
}

void from_json(const json& j, LyapunovConfig& c) {
  require_known_keys(j,
                     {"dynamics_hidden", "icnn_hidden", "alpha", "eps_pd", "width", "dt", "risk_on_projected",
                      "use_anchor", "anchor_weight", "lr"},
                     "lyapunov");
  read_field(j, "dynamics_hidden", c.dynamics_hidden);
  read_field(j, "icnn_hidden", c.icnn_hidden);
  read_field(j, "alpha", c.alpha);
  read_field(j, "eps_pd", c.eps_pd);
  read_field(j, "width", c.width);
  read_field(j, "dt", c.dt);
  read_field(j, "risk_on_projected", c.risk_on_projected);
  read_field(j, "use_anchor", c.use_anchor);
  read_field(j, "anchor_weight", c.anchor_weight);
  read_field(j, "lr", c.lr);
  c.validate();
}

LyapunovPair::LyapunovPair(std::size_t state_dim, LyapunovConfig cfg, Rng& init) : cfg_(std::move(cfg)) {
  cfg_.validate();
  dynamics_ = diffcore::DenseNet::make(layer_sizes(state_dim, cfg_.dynamics_hidden, state_dim),
                                       diffcore::Activation::relu(), diffcore::Activation::identity(), init);
  g_ = diffcore::IcnnNet::make(state_dim, cfg_.icnn_hidden, cfg_.width, init);
  init_optimizers();
}

LyapunovPair::LyapunovPair(diffcore::DenseNet dynamics, diffcore::IcnnNet g, LyapunovConfig cfg)
    : cfg_(std::move(cfg)), dynamics_(std::move(dynamics)), g_(std::move(g)) {
  cfg_.validate();
  if (dynamics_.input_dim() != g_.input_dim() || dynamics_.output_dim() != g_.input_dim())
    throw std::invalid_argument("lyapunov: dynamics must map the certificate's state space to itself");
  init_optimizers();
}

void LyapunovPair::init_optimizers() {
  dyn_opt_ = diffcore::AdamState(std::as_const(dynamics_).parameters(), {.lr = cfg_.lr});
  icnn_opt_ = diffcore::AdamState(std::as_const(g_).parameters(), {.lr = cfg_.lr});
}

double LyapunovPair::value(std::span<const double> s) const {
  if (s.size() != state_dim()) throw std::invalid_argument("lyapunov: state size mismatch");
  return values(Matrix::row_vector(s))[0];
}

Vector LyapunovPair::values(const Matrix& s) const {
  const Vector g = g_.forward(s);
  const double g0 = g_.value(Vector(state_dim(), 0.0));
  Vector v(s.rows());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    const auto row = s.row(r);
    v[r] = smoothed_relu(g[r] - g0, cfg_.width) + cfg_.eps_pd * dot(row, row);
  }
  return v;
}

Matrix LyapunovPair::gradients(const Matrix& s) const {
  const Vector g = g_.forward(s);
  const double g0 = g_.value(Vector(state_dim(), 0.0));
  Matrix grad = g_.input_gradient(s);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    const double slope = smoothed_relu_grad(g[r] - g0, cfg_.width);
    auto gr = grad.row(r);
    const auto sr = s.row(r);
    for (std::size_t k = 0; k < gr.size(); ++k) gr[k] = slope * gr[k] + 2.0 * cfg_.eps_pd * sr[k];
  }
  return grad;
}

Vector LyapunovPair::gradient(std::span<const double> s) const {
  const Matrix g = gradients(Matrix::row_vector(s));
  return Vector(g.values().begin(), g.values().end());
}

Vector LyapunovPair::nominal(std::span<const double> s) const { return dynamics_.forward(s); }

double LyapunovPair::lie_derivative(std::span<const double> s, std::span<const double> f) const {
  if (f.size() != state_dim()) throw std::invalid_argument("lyapunov: dynamics size mismatch");
  return dot(gradient(s), f);
}

Matrix LyapunovPair::stable_dynamics(const Matrix& s, std::vector<bool>* projected) const {
  Matrix f = dynamics_.forward(s);
  const Matrix grad = gradients(s);
  const Vector v = values(s);
  if (projected) projected->assign(s.rows(), false);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    const auto gr = grad.row(r);
    auto fr = f.row(r);
    const double norm2 = dot(gr, gr);
    if (norm2 < kFlatGradient) continue;
    const double push = smoothed_relu(dot(gr, fr) + cfg_.alpha * v[r], cfg_.width);
    if (push == 0.0) continue;
    for (std::size_t k = 0; k < fr.size(); ++k) fr[k] -= gr[k] * push / norm2;
    if (projected) (*projected)[r] = true;
  }
  return f;
}

Vector LyapunovPair::stable_dynamics(std::span<const double> s, bool* projected) const {
  std::vector<bool> flag;
  const Matrix f = stable_dynamics(Matrix::row_vector(s), &flag);
  if (projected) *projected = flag[0];
  return Vector(f.values().begin(), f.values().end());
}

// Everything the risk needs per state, with tapes when gradients will follow.
struct LyapunovPair::Forward {
  diffcore::DenseTape dyn_tape;
  diffcore::IcnnTape g_tape;
  Matrix fbar;
  Vector d, v, jvp, u, h;
  std::vector<bool> flat;  // ‖∇V‖² below threshold: projection skipped
  double origin_value = 0.0;
};

LyapunovPair::Forward LyapunovPair::evaluate(const Matrix& s, bool with_tape) const {
  if (s.cols() != state_dim()) throw std::invalid_argument("lyapunov: state size mismatch");
  if (s.rows() == 0) throw std::invalid_argument("lyapunov: empty state batch");
  Forward fw;
  fw.fbar = dynamics_.forward(s, with_tape ? &fw.dyn_tape : nullptr);
  auto [g, jvp] = g_.forward_jvp(s, fw.fbar, with_tape ? &fw.g_tape : nullptr);
  const Vector zero(state_dim(), 0.0);
  const double g0 = g_.value(zero);
  fw.origin_value = smoothed_relu(g0 - g0, cfg_.width);

  const std::size_t n = s.rows();
  fw.d.resize(n);
  fw.v.resize(n);
  fw.u.resize(n);
  fw.h.resize(n);
  fw.flat.assign(n, false);
  for (std::size_t r = 0; r < n; ++r) {
    const auto sr = s.row(r);
    fw.d[r] = g[r] - g0;
    fw.v[r] = smoothed_relu(fw.d[r], cfg_.width) + cfg_.eps_pd * dot(sr, sr);
    fw.u[r] = smoothed_relu_grad(fw.d[r], cfg_.width) * jvp[r] + 2.0 * cfg_.eps_pd * dot(sr, fw.fbar.row(r));
    fw.h[r] = fw.u[r] + cfg_.alpha * fw.v[r];
  }
  if (cfg_.risk_on_projected) {
    const Matrix grad = gradients(s);
    for (std::size_t r = 0; r < n; ++r) fw.flat[r] = dot(grad.row(r), grad.row(r)) < kFlatGradient;
  }
  fw.jvp = std::move(jvp);
  return fw;
}

RiskEval LyapunovPair::risk(const Matrix& states) const {
  const Forward fw = evaluate(states, false);
  RiskEval out;
  out.origin_value = fw.origin_value;
  out.per_state.resize(states.rows());
  std::size_t active = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < states.rows(); ++r) {
    const bool project = cfg_.risk_on_projected && !fw.flat[r];
    // With projection the decrease term becomes h − σ(h), which never exceeds l/2.
    const double decrease = project ? fw.h[r] - smoothed_relu(fw.h[r], cfg_.width) : fw.h[r];
    out.per_state[r] = std::max(0.0, -fw.v[r]) + std::max(0.0, decrease);
    sum += out.per_state[r];
    if (fw.h[r] > 0.0) ++active;
  }
  out.risk = sum / static_cast<double>(states.rows()) + fw.origin_value * fw.origin_value;
  out.active_fraction = static_cast<double>(active) / static_cast<double>(states.rows());
  return out;
}

double LyapunovPair::risk_with_grad(const Matrix& states, double weight, PairGrads& grads) const {
  Forward fw = evaluate(states, true);
  const std::size_t n = states.rows();
  const double scale = weight / static_cast<double>(n);
  const double l = cfg_.width;

  Vector adj_g(n), adj_jvp(n);
  Matrix adj_f(n, state_dim());
  double adj_g0 = 0.0, sum = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const bool project = cfg_.risk_on_projected && !fw.flat[r];
    const double h = fw.h[r];
    const double decrease = project ? h - smoothed_relu(h, l) : h;
    sum += std::max(0.0, -fw.v[r]) + std::max(0.0, decrease);

    const double a_h = decrease > 0.0 ? (project ? 1.0 - smoothed_relu_grad(h, l) : 1.0) : 0.0;
    const double a_v = (fw.v[r] < 0.0 ? -1.0 : 0.0) + cfg_.alpha * a_h;
    const double a_u = a_h;
    const double s1 = smoothed_relu_grad(fw.d[r], l), s2 = smoothed_relu_grad2(fw.d[r], l);
    const double a_d = a_v * s1 + a_u * s2 * fw.jvp[r];
    adj_g[r] = scale * a_d;
    adj_jvp[r] = scale * a_u * s1;
    adj_g0 -= scale * a_d;
    const auto sr = states.row(r);
    auto fr = adj_f.row(r);
    for (std::size_t k = 0; k < fr.size(); ++k) fr[k] = scale * a_u * 2.0 * cfg_.eps_pd * sr[k];
  }
  // V(0) is zero by construction, so the V(0)² term contributes no gradient.
  g_.backward(fw.g_tape, adj_g, adj_jvp, &grads.icnn, nullptr, &adj_f);

  diffcore::IcnnTape origin_tape;
  g_.forward(Matrix(1, state_dim()), &origin_tape);
  const double origin_adj[1] = {adj_g0};
  g_.backward(origin_tape, origin_adj, {}, &grads.icnn, nullptr, nullptr);

  dynamics_.backward(fw.dyn_tape, adj_f, &grads.dynamics, nullptr);
  return sum / static_cast<double>(n) + fw.origin_value * fw.origin_value;
}

double LyapunovPair::anchor_loss(const Matrix& s, const Matrix& s2) const {
  PairGrads unused = make_grads();
  return anchor_with_grad(s, s2, 0.0, unused);
}

double LyapunovPair::anchor_with_grad(const Matrix& s, const Matrix& s2, double weight, PairGrads& grads) const {
  if (s.rows() != s2.rows() || s.cols() != state_dim() || s2.cols() != state_dim())
    throw std::invalid_argument("lyapunov: anchor batch shape mismatch");
  if (s.rows() == 0) throw std::invalid_argument("lyapunov: empty anchor batch");
  diffcore::DenseTape tape;
  const Matrix f = dynamics_.forward(s, weight != 0.0 ? &tape : nullptr);
  const double n = static_cast<double>(s.rows());
  Matrix up(s.rows(), s.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double e = s.values()[i] + f.values()[i] * cfg_.dt - s2.values()[i];
    loss += e * e;
    up.values()[i] = weight * 2.0 * e * cfg_.dt / n;
  }
  if (weight != 0.0) dynamics_.backward(tape, up, &grads.dynamics, nullptr);
  return loss / n;
}

bool LyapunovPair::apply(const PairGrads& grads) {
  if (!diffcore::all_finite(grads.dynamics) || !diffcore::all_finite(grads.icnn)) return false;
  const bool a = adam_step(dynamics_.parameters(), grads.dynamics, dyn_opt_);
  const bool b = adam_step(g_, grads.icnn, icnn_opt_);
  return a && b;
}

json LyapunovPair::to_json() const {
  return {{"config", cfg_},
          {"dynamics", dynamics_.to_json()},
          {"icnn", g_.to_json()},
          {"dynamics_opt", dyn_opt_.to_json()},
          {"icnn_opt", icnn_opt_.to_json()}};
}

LyapunovPair LyapunovPair::from_json(const json& j) {
  LyapunovPair p(diffcore::DenseNet::from_json(j.at("dynamics")), diffcore::IcnnNet::from_json(j.at("icnn")),
                 j.at("config").get<LyapunovConfig>());
  p.dyn_opt_ = diffcore::AdamState::from_json(j.at("dynamics_opt"));
  p.icnn_opt_ = diffcore::AdamState::from_json(j.at("icnn_opt"));
  return p;
}

}  // namespace sbcq::lyapunov
