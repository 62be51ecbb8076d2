#include <cmath>
#include <stdexcept>
#include <string>

#include "sbcq/core/kernels.hpp"
#include "sbcq/diffcore/dense.hpp"
#include "sbcq/diffcore/noisy.hpp"

namespace sbcq::diffcore {
namespace {

double signed_sqrt(double x) { return std::copysign(std::sqrt(std::abs(x)), x); }

}  // namespace

FactoredNoise factored_noise(std::span<const double> e_in, std::span<const double> e_out) {
  FactoredNoise n{Matrix(e_out.size(), e_in.size()), Vector(e_out.size())};
  for (std::size_t i = 0; i < e_out.size(); ++i) {
    const double fo = signed_sqrt(e_out[i]);
    n.eps_b[i] = fo;
    for (std::size_t j = 0; j < e_in.size(); ++j) n.eps_w(i, j) = fo * signed_sqrt(e_in[j]);
  }
  return n;
}

FactoredNoise sample_factored_noise(std::size_t p, std::size_t q, Rng& rng) {
  if (p == 0 || q == 0) throw std::invalid_argument("sample_factored_noise: dimensions must be >= 1");
  Vector e_in(p), e_out(q);
  for (double& e : e_in) e = rng.normal();
  for (double& e : e_out) e = rng.normal();
  return factored_noise(e_in, e_out);
}

Matrix NoisyDense::effective_weight(bool with_noise) const {
  Matrix w = mu_w;
  if (with_noise) {
    auto out = w.values();
    auto s = sigma_w.values();
    auto e = eps_w.values();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += s[k] * e[k];
  }
  return w;
}

Vector NoisyDense::effective_bias(bool with_noise) const {
  Vector b = mu_b;
  if (with_noise)
    for (std::size_t k = 0; k < b.size(); ++k) b[k] += sigma_b[k] * eps_b[k];
  return b;
}

NoisyNet::NoisyNet(std::vector<NoisyDense> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const bool shapes_ok = l.sigma_w.rows() == l.mu_w.rows() && l.sigma_w.cols() == l.mu_w.cols() &&
                           l.eps_w.rows() == l.mu_w.rows() && l.eps_w.cols() == l.mu_w.cols() &&
                           l.mu_b.size() == l.out_dim() && l.sigma_b.size() == l.out_dim() &&
                           l.eps_b.size() == l.out_dim();
    if (!shapes_ok) throw std::invalid_argument("NoisyNet: inconsistent tensor shapes in layer " + std::to_string(i));
    if (i > 0 && l.in_dim() != layers_[i - 1].out_dim())
      throw std::invalid_argument("NoisyNet: layer dimensions do not chain at layer " + std::to_string(i));
  }
}

NoisyNet NoisyNet::make(std::span<const std::size_t> sizes, Activation hidden, Activation output, Rng& rng,
                        double sigma0) {
  if (sizes.size() < 2) throw std::invalid_argument("NoisyNet::make: need at least input and output sizes");
  std::vector<NoisyDense> layers;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const std::size_t p = sizes[i], q = sizes[i + 1];
    NoisyDense l;
    l.mu_w = Matrix(q, p);
    l.mu_b = Vector(q);
    init_uniform_fan_in(l.mu_w, l.mu_b, rng);
    const double s = sigma0 / std::sqrt(static_cast<double>(p));
    l.sigma_w = Matrix(q, p, s);
    l.sigma_b = Vector(q, s);
    l.eps_w = Matrix(q, p);
    l.eps_b = Vector(q);
    l.act = i + 2 == sizes.size() ? output : hidden;
    layers.push_back(std::move(l));
  }
  return NoisyNet(std::move(layers));
}

std::size_t NoisyNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
std::size_t NoisyNet::output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

Matrix NoisyNet::forward(const Matrix& x, NoisyTape* tape, bool with_noise) const {
  if (x.cols() != input_dim())
    throw std::invalid_argument("NoisyNet::forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                                std::to_string(input_dim()));
  if (tape) {
    tape->stamp = {this, generation_};
    tape->with_noise = with_noise;
    tape->weights.resize(layers_.size());
    tape->inputs.resize(layers_.size());
    tape->pre.resize(layers_.size());
    tape->post.resize(layers_.size());
  }
  Matrix cur = x;
  Matrix pre;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    Matrix w = l.effective_weight(with_noise);
    const Vector b = l.effective_bias(with_noise);
    kernels::affine(cur, w, b, pre);
    Matrix post = pre;
    if (l.act.kind != ActivationKind::identity)
      for (double& v : post.values()) v = l.act.apply(v);
    if (tape) {
      tape->weights[i] = std::move(w);
      tape->inputs[i] = std::move(cur);
      tape->pre[i] = pre;
      tape->post[i] = post;
    }
    cur = std::move(post);
  }
  return cur;
}

void NoisyNet::backward(const NoisyTape& tape, const Matrix& upstream, GradBuffer* grads, Matrix* input_grad) const {
  check_tape(tape.stamp, this, generation_, "NoisyNet::backward");
  if (upstream.cols() != output_dim() || upstream.rows() != tape.post.back().rows())
    throw std::invalid_argument("NoisyNet::backward: upstream shape mismatch");
  if (grads && grads->size() != 4 * layers_.size())
    throw std::invalid_argument("NoisyNet::backward: gradient buffer does not match network");
  Matrix up = upstream;
  Matrix down;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const auto& l = layers_[i];
    const bool need_input = i > 0 || input_grad;
    Vector gw, gb;
    if (grads) {
      gw.assign(l.mu_w.size(), 0.0);
      gb.assign(l.mu_b.size(), 0.0);
    }
    affine_backward(tape.weights[i], l.act, tape.inputs[i], tape.pre[i], tape.post[i], up, gw, gb,
                    need_input ? &down : nullptr);
    if (grads) {
      auto& g_mu_w = (*grads)[4 * i];
      auto& g_sigma_w = (*grads)[4 * i + 1];
      auto& g_mu_b = (*grads)[4 * i + 2];
      auto& g_sigma_b = (*grads)[4 * i + 3];
      auto ew = l.eps_w.values();
      for (std::size_t k = 0; k < gw.size(); ++k) {
        g_mu_w[k] += gw[k];
        if (tape.with_noise) g_sigma_w[k] += ew[k] * gw[k];
      }
      for (std::size_t k = 0; k < gb.size(); ++k) {
        g_mu_b[k] += gb[k];
        if (tape.with_noise) g_sigma_b[k] += l.eps_b[k] * gb[k];
      }
    }
    if (i > 0) up = std::move(down);
  }
  if (input_grad) *input_grad = std::move(down);
}

void NoisyNet::resample_noise(Rng& rng) {
  ++generation_;
  for (auto& l : layers_) {
    auto n = sample_factored_noise(l.in_dim(), l.out_dim(), rng);
    l.eps_w = std::move(n.eps_w);
    l.eps_b = std::move(n.eps_b);
  }
}

void NoisyNet::zero_noise() {
  ++generation_;
  for (auto& l : layers_) {
    l.eps_w.fill(0.0);
    std::fill(l.eps_b.begin(), l.eps_b.end(), 0.0);
  }
}

ParamList NoisyNet::parameters() {
  ++generation_;
  ParamList p;
  for (auto& l : layers_) {
    p.emplace_back(l.mu_w.values());
    p.emplace_back(l.sigma_w.values());
    p.emplace_back(l.mu_b);
    p.emplace_back(l.sigma_b);
  }
  return p;
}

ConstParamList NoisyNet::parameters() const {
  ConstParamList p;
  for (const auto& l : layers_) {
    p.emplace_back(l.mu_w.values());
    p.emplace_back(l.sigma_w.values());
    p.emplace_back(l.mu_b);
    p.emplace_back(l.sigma_b);
  }
  return p;
}

nlohmann::json NoisyNet::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    layers.push_back({{"in", l.in_dim()},
                      {"out", l.out_dim()},
                      {"activation", std::string(to_string(l.act.kind))},
                      {"width", l.act.width},
                      {"mu_w", matrix_to_json(l.mu_w)},
                      {"sigma_w", matrix_to_json(l.sigma_w)},
                      {"eps_w", matrix_to_json(l.eps_w)},
                      {"mu_b", l.mu_b},
                      {"sigma_b", l.sigma_b},
                      {"eps_b", l.eps_b}});
  }
  return {{"type", "noisy"}, {"layers", layers}};
}

NoisyNet NoisyNet::from_json(const nlohmann::json& j) {
  if (j.at("type") != "noisy") throw std::invalid_argument("NoisyNet::from_json: not a noisy network");
  std::vector<NoisyDense> layers;
  for (const auto& lj : j.at("layers")) {
    NoisyDense l;
    l.mu_w = matrix_from_json(lj.at("mu_w"));
    l.sigma_w = matrix_from_json(lj.at("sigma_w"));
    l.eps_w = matrix_from_json(lj.at("eps_w"));
    l.mu_b = lj.at("mu_b").get<Vector>();
    l.sigma_b = lj.at("sigma_b").get<Vector>();
    l.eps_b = lj.at("eps_b").get<Vector>();
    l.act = {activation_from_string(lj.at("activation").get<std::string>()), lj.at("width").get<double>()};
    layers.push_back(std::move(l));
  }
  return NoisyNet(std::move(layers));
}

}  // namespace sbcq::diffcore
