#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "sbcq/core/kernels.hpp"
#include "sbcq/diffcore/dense.hpp"

namespace sbcq::diffcore {

std::string_view to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::identity: return "identity";
    case ActivationKind::relu: return "relu";
    case ActivationKind::tanh: return "tanh";
    case ActivationKind::smoothed_relu: return "smoothed_relu";
  }
  return "identity";
}

ActivationKind activation_from_string(std::string_view name) {
  if (name == "identity") return ActivationKind::identity;
  if (name == "relu") return ActivationKind::relu;
  if (name == "tanh") return ActivationKind::tanh;
  if (name == "smoothed_relu") return ActivationKind::smoothed_relu;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

bool all_finite(const GradBuffer& g) {
  for (const auto& t : g)
    for (double v : t)
      if (!std::isfinite(v)) return false;
  return true;
}

void soft_update(ParamList target, const ConstParamList& online, double tau) {
  if (target.size() != online.size()) throw std::invalid_argument("soft_update: parameter count mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].size() != online[i].size()) throw std::invalid_argument("soft_update: tensor size mismatch");
    for (std::size_t j = 0; j < target[i].size(); ++j)
      target[i][j] = tau * online[i][j] + (1.0 - tau) * target[i][j];
  }
}

std::uint64_t fingerprint(const ConstParamList& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto t : params)
    for (double v : t) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
      }
    }
  return h;
}

double max_abs_difference(const ConstParamList& a, const ConstParamList& b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_difference: parameter count mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) throw std::invalid_argument("max_abs_difference: tensor size mismatch");
    for (std::size_t j = 0; j < a[i].size(); ++j) worst = std::max(worst, std::abs(a[i][j] - b[i][j]));
  }
  return worst;
}

void check_tape(const TapeStamp& stamp, const void* owner, std::uint64_t generation, const char* who) {
  if (stamp.owner != owner) throw std::invalid_argument(std::string(who) + ": tape recorded by another network");
  if (stamp.generation != generation)
    throw std::invalid_argument(std::string(who) + ": stale tape (network changed after forward)");
}

nlohmann::json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.values().begin(), m.values().end())}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols) throw std::invalid_argument("matrix_from_json: data size mismatch");
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

void init_uniform_fan_in(Matrix& weight, Vector& bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(weight.cols()));
  for (double& w : weight.values()) w = rng.uniform(-bound, bound);
  for (double& b : bias) b = rng.uniform(-bound, bound);
}

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.size() != l.weight.rows()) throw std::invalid_argument("DenseNet: bias size != weight rows");
    if (i > 0 && l.weight.cols() != layers_[i - 1].weight.rows())
      throw std::invalid_argument("DenseNet: layer dimensions do not chain at layer " + std::to_string(i));
  }
}

DenseNet DenseNet::make(std::span<const std::size_t> sizes, Activation hidden, Activation output, Rng& rng) {
  if (sizes.size() < 2) throw std::invalid_argument("DenseNet::make: need at least input and output sizes");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    DenseLayer l{Matrix(sizes[i + 1], sizes[i]), Vector(sizes[i + 1]), i + 2 == sizes.size() ? output : hidden};
    init_uniform_fan_in(l.weight, l.bias, rng);
    layers.push_back(std::move(l));
  }
  return DenseNet(std::move(layers));
}

std::size_t DenseNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().weight.cols(); }
std::size_t DenseNet::output_dim() const { return layers_.empty() ? 0 : layers_.back().weight.rows(); }

Matrix DenseNet::forward(const Matrix& x, DenseTape* tape) const {
  if (x.cols() != input_dim())
    throw std::invalid_argument("DenseNet::forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                                std::to_string(input_dim()));
  if (tape) {
    tape->stamp = {this, generation_};
    tape->inputs.resize(layers_.size());
    tape->pre.resize(layers_.size());
    tape->post.resize(layers_.size());
  }
  Matrix cur = x;
  Matrix pre;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    kernels::affine(cur, l.weight, l.bias, pre);
    Matrix post = pre;
    if (l.act.kind != ActivationKind::identity)
      for (double& v : post.values()) v = l.act.apply(v);
    if (tape) {
      tape->inputs[i] = std::move(cur);
      tape->pre[i] = pre;
      tape->post[i] = post;
    }
    cur = std::move(post);
  }
  return cur;
}

Vector DenseNet::forward(std::span<const double> x) const {
  Matrix y = forward(Matrix::row_vector(x));
  return {y.values().begin(), y.values().end()};
}

void affine_backward(const Matrix& weight, const Activation& act, const Matrix& input, const Matrix& pre,
                     const Matrix& post, const Matrix& upstream, std::span<double> grad_w, std::span<double> grad_b,
                     Matrix* input_grad) {
  Matrix delta = upstream;
  if (act.kind != ActivationKind::identity) {
    auto d = delta.values();
    auto p = pre.values();
    auto y = post.values();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] *= act.derivative(p[k], y[k]);
  }
  if (!grad_w.empty()) kernels::matmul_tn_acc(delta, input, grad_w);
  if (!grad_b.empty()) kernels::column_sum_acc(delta, grad_b);
  if (input_grad) kernels::matmul(delta, weight, *input_grad);
}

void DenseNet::backward(const DenseTape& tape, const Matrix& upstream, GradBuffer* grads, Matrix* input_grad) const {
  check_tape(tape.stamp, this, generation_, "DenseNet::backward");
  if (upstream.cols() != output_dim() || upstream.rows() != tape.post.back().rows())
    throw std::invalid_argument("DenseNet::backward: upstream shape mismatch");
  if (grads && grads->size() != 2 * layers_.size())
    throw std::invalid_argument("DenseNet::backward: gradient buffer does not match network");
  Matrix up = upstream;
  Matrix down;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const bool need_input = i > 0 || input_grad;
    std::span<double> gw, gb;
    if (grads) {
      gw = (*grads)[2 * i];
      gb = (*grads)[2 * i + 1];
    }
    affine_backward(layers_[i].weight, layers_[i].act, tape.inputs[i], tape.pre[i], tape.post[i], up, gw, gb,
                    need_input ? &down : nullptr);
    if (i > 0) up = std::move(down);
  }
  if (input_grad) *input_grad = std::move(down);
}

ParamList DenseNet::parameters() {
  ++generation_;
  ParamList p;
  for (auto& l : layers_) {
    p.emplace_back(l.weight.values());
    p.emplace_back(l.bias);
  }
  return p;
}

ConstParamList DenseNet::parameters() const {
  ConstParamList p;
  for (const auto& l : layers_) {
    p.emplace_back(l.weight.values());
    p.emplace_back(l.bias);
  }
  return p;
}

nlohmann::json DenseNet::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    layers.push_back({{"in", l.weight.cols()},
                      {"out", l.weight.rows()},
                      {"activation", std::string(to_string(l.act.kind))},
                      {"width", l.act.width},
                      {"weight", std::vector<double>(l.weight.values().begin(), l.weight.values().end())},
                      {"bias", l.bias}});
  }
  return {{"type", "dense"}, {"layers", layers}};
}

DenseNet DenseNet::from_json(const nlohmann::json& j) {
  if (j.at("type") != "dense") throw std::invalid_argument("DenseNet::from_json: not a dense network");
  std::vector<DenseLayer> layers;
  for (const auto& lj : j.at("layers")) {
    DenseLayer l;
    const auto in = lj.at("in").get<std::size_t>();
    const auto out = lj.at("out").get<std::size_t>();
    const auto w = lj.at("weight").get<std::vector<double>>();
    if (w.size() != in * out) throw std::invalid_argument("DenseNet::from_json: weight size mismatch");
    l.weight = Matrix(out, in);
    std::copy(w.begin(), w.end(), l.weight.data());
    l.bias = lj.at("bias").get<Vector>();
    l.act = {activation_from_string(lj.at("activation").get<std::string>()), lj.at("width").get<double>()};
    layers.push_back(std::move(l));
  }
  return DenseNet(std::move(layers));
}

}  // namespace sbcq::diffcore
