#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "sbcq/core/matrix.hpp"
#include "sbcq/core/rng.hpp"
#include "sbcq/diffcore/params.hpp"

namespace sbcq::diffcore {

/// One ICNN layer: pre = W·x + U·z_prev + b. U is empty on the first layer and must stay
/// elementwise non-negative elsewhere.
struct IcnnLayer {
  Matrix w;  // width × input_dim
  Matrix u;  // width × previous width (empty for the first layer)
  Vector b;

  friend bool operator==(const IcnnLayer&, const IcnnLayer&) = default;
};

struct IcnnTape {
  TapeStamp stamp;
  bool has_tangent = false;
  Matrix x, dir;
  std::vector<Matrix> pre, z;    // hidden layers
  std::vector<Matrix> dpre, dz;  // tangents along dir
  Matrix out_pre;                // B×1 output (no activation)
};

/// Input-convex network g: ℝⁿ → ℝ.
///   z_1 = σ(W_0 x + b_0),  z_{k+1} = σ(W_k x + U_k z_k + b_k),  g = w_L·x + u_L·z_L + b_L
/// with σ the smoothed ReLU (convex, non-decreasing) and U_k ≥ 0, so g is convex in x.
///
/// Besides the value, the network propagates a tangent (forward-mode JVP) so the
/// directional derivative ∇g(x)·d can be formed and differentiated with respect to the
/// parameters in the same reverse pass.
class IcnnNet {
public:
  IcnnNet() = default;
  IcnnNet(std::vector<IcnnLayer> layers, double width);

  static IcnnNet make(std::size_t input_dim, std::span<const std::size_t> hidden, double width, Rng& rng);

  std::size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().w.cols(); }
  double width() const { return width_; }
  const std::vector<IcnnLayer>& layers() const { return layers_; }
  IcnnLayer& layer(std::size_t i) {
    ++generation_;
    return layers_.at(i);
  }

  /// g(x) for every row of x.
  Vector forward(const Matrix& x, IcnnTape* tape = nullptr) const;
  double value(std::span<const double> x) const;

  /// (g(x_r), ∇g(x_r)·dir_r) for every row r.
  std::pair<Vector, Vector> forward_jvp(const Matrix& x, const Matrix& dir, IcnnTape* tape = nullptr) const;

  /// Reverse pass for upstream adjoints on g (and on the tangent, when the tape has one).
  /// Accumulates parameter grads, x adjoints and dir adjoints into whichever outputs are given.
  void backward(const IcnnTape& tape, std::span<const double> g_adj, std::span<const double> tangent_adj,
                GradBuffer* grads, Matrix* x_adj, Matrix* dir_adj) const;

  /// ∇g(x) for every row of x, by reverse mode.
  Matrix input_gradient(const Matrix& x) const;

  /// Clamp every convex-path weight to ≥ 0.
  void project();
  bool convex_weights_nonnegative() const;

  /// Order per layer: W, [U], b.
  ParamList parameters();
  ConstParamList parameters() const;
  /// True for entries of parameters() that are convex-path (U) tensors.
  std::vector<bool> convex_mask() const;
  GradBuffer make_grads() const { return zeros_like(parameters()); }

  nlohmann::json to_json() const;
  static IcnnNet from_json(const nlohmann::json& j);

  friend bool operator==(const IcnnNet& a, const IcnnNet& b) {
    return a.layers_ == b.layers_ && a.width_ == b.width_;
  }

private:
  std::vector<IcnnLayer> layers_;  // hidden layers followed by the 1-wide output layer
  double width_ = 0.1;
  std::uint64_t generation_ = 0;
};

}  // namespace sbcq::diffcore
