#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "sbcq/core/matrix.hpp"
#include "sbcq/core/rng.hpp"
#include "sbcq/diffcore/activation.hpp"
#include "sbcq/diffcore/params.hpp"

namespace sbcq::diffcore {

struct FactoredNoise {
  Matrix eps_w;  // q×p
  Vector eps_b;  // q
};

/// Factorised Gaussian noise: eps_w[i][j] = f(e_out[i])·f(e_in[j]), eps_b[i] = f(e_out[i]),
/// with f(x) = sign(x)·√|x|. Draws e_in (p values) then e_out (q values) from `rng`.
FactoredNoise sample_factored_noise(std::size_t p, std::size_t q, Rng& rng);

/// Same construction from explicit base draws.
FactoredNoise factored_noise(std::span<const double> e_in, std::span<const double> e_out);

/// Linear layer with learnable noise scale: w' = mu_w + sigma_w ⊙ eps_w, b' = mu_b + sigma_b ⊙ eps_b.
struct NoisyDense {
  Matrix mu_w, sigma_w, eps_w;
  Vector mu_b, sigma_b, eps_b;
  Activation act;

  std::size_t in_dim() const { return mu_w.cols(); }
  std::size_t out_dim() const { return mu_w.rows(); }
  Matrix effective_weight(bool with_noise) const;
  Vector effective_bias(bool with_noise) const;

  friend bool operator==(const NoisyDense&, const NoisyDense&) = default;
};

struct NoisyTape {
  TapeStamp stamp;
  bool with_noise = true;
  std::vector<Matrix> weights;  // effective weight per layer
  std::vector<Matrix> inputs, pre, post;
};

class NoisyNet {
public:
  NoisyNet() = default;
  explicit NoisyNet(std::vector<NoisyDense> layers);

  /// mu ~ U(±1/√p); sigma_w, sigma_b = sigma0/√p; noise starts at zero.
  static NoisyNet make(std::span<const std::size_t> sizes, Activation hidden, Activation output, Rng& rng,
                       double sigma0 = 0.5);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  const std::vector<NoisyDense>& layers() const { return layers_; }
  NoisyDense& layer(std::size_t i) {
    ++generation_;
    return layers_.at(i);
  }

  /// with_noise = false evaluates the mean network (eps treated as 0).
  Matrix forward(const Matrix& x, NoisyTape* tape = nullptr, bool with_noise = true) const;

  /// d/d mu_w = dW', d/d sigma_w = eps_w ⊙ dW' (and likewise for biases).
  void backward(const NoisyTape& tape, const Matrix& upstream, GradBuffer* grads, Matrix* input_grad) const;

  void resample_noise(Rng& rng);
  void zero_noise();

  /// Order per layer: mu_w, sigma_w, mu_b, sigma_b.
  ParamList parameters();
  ConstParamList parameters() const;
  GradBuffer make_grads() const { return zeros_like(parameters()); }
  std::uint64_t generation() const { return generation_; }

  nlohmann::json to_json() const;
  static NoisyNet from_json(const nlohmann::json& j);

  friend bool operator==(const NoisyNet& a, const NoisyNet& b) { return a.layers_ == b.layers_; }

private:
  std::vector<NoisyDense> layers_;
  std::uint64_t generation_ = 0;
};

}  // namespace sbcq::diffcore
