#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sbcq/core/matrix.hpp"

namespace sbcq::diffcore {

/// Mutable views over a network's parameter tensors, in a fixed network-defined order.
using ParamList = std::vector<std::span<double>>;
using ConstParamList = std::vector<std::span<const double>>;

/// Gradient storage aligned with a ParamList (same count, same sizes).
using GradBuffer = std::vector<Vector>;

inline GradBuffer zeros_like(const ConstParamList& params) {
  GradBuffer g;
  g.reserve(params.size());
  for (auto p : params) g.emplace_back(p.size(), 0.0);
  return g;
}

inline void zero(GradBuffer& g) {
  for (auto& t : g) std::fill(t.begin(), t.end(), 0.0);
}

inline void scale(GradBuffer& g, double s) {
  for (auto& t : g)
    for (double& v : t) v *= s;
}

/// True iff every gradient entry is finite.
bool all_finite(const GradBuffer& g);

/// target ← τ·online + (1 − τ)·target, tensor by tensor.
void soft_update(ParamList target, const ConstParamList& online, double tau);

/// FNV-1a over the raw bytes of all parameters; used to detect accidental mutation.
std::uint64_t fingerprint(const ConstParamList& params);

/// Largest |a − b| over aligned parameter lists.
double max_abs_difference(const ConstParamList& a, const ConstParamList& b);

/// Record stamped by forward() and checked by backward(); catches tapes reused after
/// the network changed or fed to a different network.
struct TapeStamp {
  const void* owner = nullptr;
  std::uint64_t generation = 0;
};

}  // namespace sbcq::diffcore
