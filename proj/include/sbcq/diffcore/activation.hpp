#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sbcq::diffcore {

/// Piecewise-quadratic ReLU: 0 for x ≤ 0, x²/(2l) on (0, l), x − l/2 beyond. C¹ everywhere.
inline double smoothed_relu(double x, double l) {
  if (!(l > 0.0)) throw std::invalid_argument("smoothed_relu: width must be positive");
  if (x <= 0.0) return 0.0;
  if (x < l) return x * x / (2.0 * l);
  return x - 0.5 * l;
}

inline double smoothed_relu_grad(double x, double l) {
  if (x <= 0.0) return 0.0;
  if (x < l) return x / l;
  return 1.0;
}

inline double smoothed_relu_grad2(double x, double l) { return (x > 0.0 && x < l) ? 1.0 / l : 0.0; }

enum class ActivationKind { identity, relu, tanh, smoothed_relu };

struct Activation {
  ActivationKind kind = ActivationKind::identity;
  double width = 0.1;  // smoothed_relu only

  static Activation identity() { return {ActivationKind::identity, 0.1}; }
  static Activation relu() { return {ActivationKind::relu, 0.1}; }
  static Activation tanh() { return {ActivationKind::tanh, 0.1}; }
  static Activation smoothed_relu(double l) {
    if (!(l > 0.0)) throw std::invalid_argument("smoothed_relu: width must be positive");
    return {ActivationKind::smoothed_relu, l};
  }

  double apply(double x) const {
    switch (kind) {
      case ActivationKind::identity: return x;
      case ActivationKind::relu: return x > 0.0 ? x : 0.0;
      case ActivationKind::tanh: return std::tanh(x);
      case ActivationKind::smoothed_relu: return diffcore::smoothed_relu(x, width);
    }
    return x;
  }

  /// Derivative expressed through the pre-activation `x` and the output `y`.
  double derivative(double x, double y) const {
    switch (kind) {
      case ActivationKind::identity: return 1.0;
      case ActivationKind::relu: return x > 0.0 ? 1.0 : 0.0;
      case ActivationKind::tanh: return 1.0 - y * y;
      case ActivationKind::smoothed_relu: return smoothed_relu_grad(x, width);
    }
    return 1.0;
  }

  friend bool operator==(const Activation&, const Activation&) = default;
};

std::string_view to_string(ActivationKind kind);
ActivationKind activation_from_string(std::string_view name);

}  // namespace sbcq::diffcore
