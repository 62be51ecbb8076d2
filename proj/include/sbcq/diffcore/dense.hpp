#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "sbcq/core/matrix.hpp"
#include "sbcq/core/rng.hpp"
#include "sbcq/diffcore/activation.hpp"
#include "sbcq/diffcore/params.hpp"

namespace sbcq::diffcore {

/// One affine map followed by an elementwise activation. weight is q×p (out × in).
struct DenseLayer {
  Matrix weight;
  Vector bias;
  Activation act;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct DenseTape {
  TapeStamp stamp;
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation of each layer
  std::vector<Matrix> post;    // activation output of each layer
};

/// Uniform(−1/√fan_in, 1/√fan_in) initialisation used by every network here.
void init_uniform_fan_in(Matrix& weight, Vector& bias, Rng& rng);

/// Plain feed-forward network with exact reverse-mode gradients.
class DenseNet {
public:
  DenseNet() = default;
  explicit DenseNet(std::vector<DenseLayer> layers);

  /// sizes = {in, h1, ..., out}; hidden layers use `hidden`, the last uses `output`.
  static DenseNet make(std::span<const std::size_t> sizes, Activation hidden, Activation output, Rng& rng);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t depth() const { return layers_.size(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  /// Mutable access invalidates outstanding tapes.
  DenseLayer& layer(std::size_t i) {
    ++generation_;
    return layers_.at(i);
  }

  Matrix forward(const Matrix& x, DenseTape* tape = nullptr) const;
  Vector forward(std::span<const double> x) const;

  /// Reverse pass. Parameter gradients are accumulated into `grads` (if given); the
  /// gradient with respect to the input is written to `input_grad` (if given).
  void backward(const DenseTape& tape, const Matrix& upstream, GradBuffer* grads, Matrix* input_grad) const;

  /// Order: W0, b0, W1, b1, ...
  ParamList parameters();
  ConstParamList parameters() const;
  GradBuffer make_grads() const { return zeros_like(parameters()); }
  std::uint64_t generation() const { return generation_; }

  nlohmann::json to_json() const;
  static DenseNet from_json(const nlohmann::json& j);

  friend bool operator==(const DenseNet& a, const DenseNet& b) { return a.layers_ == b.layers_; }

private:
  std::vector<DenseLayer> layers_;
  std::uint64_t generation_ = 0;
};

/// Shared reverse step for one affine+activation layer.
/// delta = upstream ⊙ act'(pre); gW += deltaᵀ·input; gb += Σ delta; input_grad = delta·W.
void affine_backward(const Matrix& weight, const Activation& act, const Matrix& input, const Matrix& pre,
                     const Matrix& post, const Matrix& upstream, std::span<double> grad_w, std::span<double> grad_b,
                     Matrix* input_grad);

void check_tape(const TapeStamp& stamp, const void* owner, std::uint64_t generation, const char* who);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace sbcq::diffcore
