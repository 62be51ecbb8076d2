#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "sbcq/diffcore/params.hpp"

namespace sbcq::diffcore {

class IcnnNet;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct AdamState {
  AdamConfig config;
  std::vector<Vector> m, v;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(const ConstParamList& params, AdamConfig cfg);

  nlohmann::json to_json() const;
  static AdamState from_json(const nlohmann::json& j);

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update. Returns false and leaves everything untouched when a
/// gradient entry is non-finite.
[[nodiscard]] bool adam_step(ParamList params, const GradBuffer& grads, AdamState& state);

/// Adam followed by the ICNN non-negativity projection on the convex path.
[[nodiscard]] bool adam_step(IcnnNet& net, const GradBuffer& grads, AdamState& state);

}  // namespace sbcq::diffcore
