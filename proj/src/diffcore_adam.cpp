#include <cmath>
#include <stdexcept>

#include "sbcq/diffcore/adam.hpp"
#include "sbcq/diffcore/icnn.hpp"

namespace sbcq::diffcore {

AdamState::AdamState(const ConstParamList& params, AdamConfig cfg) : config(cfg) {
  for (auto p : params) {
    m.emplace_back(p.size(), 0.0);
    v.emplace_back(p.size(), 0.0);
  }
}

bool adam_step(ParamList params, const GradBuffer& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].size() != grads[i].size() || params[i].size() != state.m[i].size())
      throw std::invalid_argument("adam_step: tensor shape mismatch");
  if (!all_finite(grads)) return false;

  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    const auto& g = grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
  return true;
}

bool adam_step(IcnnNet& net, const GradBuffer& grads, AdamState& state) {
  if (!adam_step(net.parameters(), grads, state)) return false;
  net.project();
  return true;
}

nlohmann::json AdamState::to_json() const {
  return {{"lr", config.lr}, {"beta1", config.beta1}, {"beta2", config.beta2}, {"eps", config.eps},
          {"step", step},    {"m", m},                {"v", v}};
}

AdamState AdamState::from_json(const nlohmann::json& j) {
  AdamState s;
  s.config = {j.at("lr").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
              j.at("eps").get<double>()};
  s.step = j.at("step").get<std::uint64_t>();
  s.m = j.at("m").get<std::vector<Vector>>();
  s.v = j.at("v").get<std::vector<Vector>>();
  return s;
}

}  // namespace sbcq::diffcore
