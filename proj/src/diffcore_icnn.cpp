#include <cmath>
#include <stdexcept>
#include <string>

#include "sbcq/core/kernels.hpp"
#include "sbcq/diffcore/activation.hpp"
#include "sbcq/diffcore/dense.hpp"
#include "sbcq/diffcore/icnn.hpp"

namespace sbcq::diffcore {
namespace {

void add_into(Matrix& dst, const Matrix& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
}

void add_product(const Matrix& a, const Matrix& b, Matrix& acc) {
  Matrix tmp;
  kernels::matmul(a, b, tmp);
  if (acc.empty()) {
    acc = std::move(tmp);
  } else {
    add_into(acc, tmp);
  }
}

}  // namespace

IcnnNet::IcnnNet(std::vector<IcnnLayer> layers, double width) : layers_(std::move(layers)), width_(width) {
  if (!(width_ > 0.0)) throw std::invalid_argument("IcnnNet: smoothed ReLU width must be positive");
  if (layers_.size() < 2) throw std::invalid_argument("IcnnNet: need at least one hidden layer and an output layer");
  const std::size_t n = layers_.front().w.cols();
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& l = layers_[k];
    if (l.w.cols() != n) throw std::invalid_argument("IcnnNet: input-path width mismatch at layer " + std::to_string(k));
    if (l.b.size() != l.w.rows()) throw std::invalid_argument("IcnnNet: bias size mismatch at layer " + std::to_string(k));
    if (k == 0) {
      if (!l.u.empty()) throw std::invalid_argument("IcnnNet: first layer has no convex path");
    } else if (l.u.rows() != l.w.rows() || l.u.cols() != layers_[k - 1].w.rows()) {
      throw std::invalid_argument("IcnnNet: convex-path shape mismatch at layer " + std::to_string(k));
    }
  }
  if (layers_.back().w.rows() != 1) throw std::invalid_argument("IcnnNet: output layer must be scalar");
}

IcnnNet IcnnNet::make(std::size_t input_dim, std::span<const std::size_t> hidden, double width, Rng& rng) {
  if (hidden.empty()) throw std::invalid_argument("IcnnNet::make: need at least one hidden layer");
  std::vector<IcnnLayer> layers;
  std::size_t prev = 0;
  for (std::size_t k = 0; k <= hidden.size(); ++k) {
    const std::size_t out = k < hidden.size() ? hidden[k] : 1;
    IcnnLayer l{Matrix(out, input_dim), Matrix(), Vector(out)};
    init_uniform_fan_in(l.w, l.b, rng);
    if (k > 0) {
      l.u = Matrix(out, prev);
      const double bound = 1.0 / std::sqrt(static_cast<double>(prev));
      for (double& u : l.u.values()) u = rng.uniform(0.0, bound);
    }
    prev = out;
    layers.push_back(std::move(l));
  }
  return IcnnNet(std::move(layers), width);
}

std::pair<Vector, Vector> IcnnNet::forward_jvp(const Matrix& x, const Matrix& dir, IcnnTape* tape) const {
  if (x.cols() != input_dim())
    throw std::invalid_argument("IcnnNet::forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                                std::to_string(input_dim()));
  const bool tangent = !dir.empty();
  if (tangent && (dir.rows() != x.rows() || dir.cols() != x.cols()))
    throw std::invalid_argument("IcnnNet::forward_jvp: direction shape mismatch");

  const std::size_t hidden = layers_.size() - 1;
  IcnnTape local;
  IcnnTape& t = tape ? *tape : local;
  t.stamp = {this, generation_};
  t.has_tangent = tangent;
  t.x = x;
  t.dir = dir;
  t.pre.assign(hidden, Matrix());
  t.z.assign(hidden, Matrix());
  t.dpre.assign(tangent ? hidden : 0, Matrix());
  t.dz.assign(tangent ? hidden : 0, Matrix());

  Matrix tmp;
  for (std::size_t k = 0; k <= hidden; ++k) {
    const auto& l = layers_[k];
    Matrix pre;
    kernels::affine(x, l.w, l.b, pre);
    if (k > 0) {
      kernels::affine(t.z[k - 1], l.u, Vector(l.u.rows(), 0.0), tmp);
      add_into(pre, tmp);
    }
    Matrix dpre;
    if (tangent) {
      kernels::affine(dir, l.w, Vector(l.w.rows(), 0.0), dpre);
      if (k > 0) {
        kernels::affine(t.dz[k - 1], l.u, Vector(l.u.rows(), 0.0), tmp);
        add_into(dpre, tmp);
      }
    }
    if (k == hidden) {
      t.out_pre = pre;
      Vector g(pre.values().begin(), pre.values().end());
      Vector gdot = tangent ? Vector(dpre.values().begin(), dpre.values().end()) : Vector();
      return {std::move(g), std::move(gdot)};
    }
    Matrix z = pre;
    for (double& v : z.values()) v = smoothed_relu(v, width_);
    if (tangent) {
      Matrix dz = dpre;
      auto p = pre.values();
      auto d = dz.values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= smoothed_relu_grad(p[i], width_);
      t.dpre[k] = std::move(dpre);
      t.dz[k] = std::move(dz);
    }
    t.pre[k] = std::move(pre);
    t.z[k] = std::move(z);
  }
  return {};
}

Vector IcnnNet::forward(const Matrix& x, IcnnTape* tape) const { return forward_jvp(x, Matrix(), tape).first; }

double IcnnNet::value(std::span<const double> x) const { return forward(Matrix::row_vector(x))[0]; }

void IcnnNet::backward(const IcnnTape& tape, std::span<const double> g_adj, std::span<const double> tangent_adj,
                       GradBuffer* grads, Matrix* x_adj, Matrix* dir_adj) const {
  check_tape(tape.stamp, this, generation_, "IcnnNet::backward");
  const std::size_t batch = tape.x.rows();
  const bool tangent = tape.has_tangent && !tangent_adj.empty();
  if (g_adj.size() != batch || (!tangent_adj.empty() && tangent_adj.size() != batch))
    throw std::invalid_argument("IcnnNet::backward: adjoint length mismatch");
  if (!tangent_adj.empty() && !tape.has_tangent)
    throw std::invalid_argument("IcnnNet::backward: tangent adjoint given but tape has no tangent");
  if (grads && grads->size() != parameters().size())
    throw std::invalid_argument("IcnnNet::backward: gradient buffer does not match network");

  const std::size_t hidden = layers_.size() - 1;
  // Parameter index of W for layer k: layer 0 has (W, b); later layers (W, U, b).
  auto w_index = [](std::size_t k) { return k == 0 ? 0 : 2 + 3 * (k - 1); };

  Matrix adj_pre(batch, 1), adj_dpre;
  for (std::size_t r = 0; r < batch; ++r) adj_pre(r, 0) = g_adj[r];
  if (tangent) {
    adj_dpre = Matrix(batch, 1);
    for (std::size_t r = 0; r < batch; ++r) adj_dpre(r, 0) = tangent_adj[r];
  }

  Matrix xa, da;
  for (std::size_t k = hidden + 1; k-- > 0;) {
    const auto& l = layers_[k];
    if (k < hidden) {
      // adj_pre currently holds the adjoint of z_k; adj_dpre the adjoint of dz_k.
      auto p = tape.pre[k].values();
      auto az = adj_pre.values();
      Matrix new_pre(batch, l.w.rows());
      auto ap = new_pre.values();
      for (std::size_t i = 0; i < ap.size(); ++i) ap[i] = smoothed_relu_grad(p[i], width_) * az[i];
      if (tangent) {
        auto adz = adj_dpre.values();
        auto dp = tape.dpre[k].values();
        for (std::size_t i = 0; i < ap.size(); ++i) {
          ap[i] += smoothed_relu_grad2(p[i], width_) * dp[i] * adz[i];
          adz[i] *= smoothed_relu_grad(p[i], width_);
        }
      }
      adj_pre = std::move(new_pre);
    }
    if (grads) {
      const std::size_t wi = w_index(k);
      kernels::matmul_tn_acc(adj_pre, tape.x, (*grads)[wi]);
      if (tangent) kernels::matmul_tn_acc(adj_dpre, tape.dir, (*grads)[wi]);
      if (k > 0) {
        kernels::matmul_tn_acc(adj_pre, tape.z[k - 1], (*grads)[wi + 1]);
        if (tangent) kernels::matmul_tn_acc(adj_dpre, tape.dz[k - 1], (*grads)[wi + 1]);
      }
      kernels::column_sum_acc(adj_pre, (*grads)[k == 0 ? 1 : wi + 2]);
    }
    if (x_adj) add_product(adj_pre, l.w, xa);
    if (dir_adj && tangent) add_product(adj_dpre, l.w, da);
    if (k > 0) {
      Matrix next;
      kernels::matmul(adj_pre, l.u, next);
      adj_pre = std::move(next);
      if (tangent) {
        Matrix nd;
        kernels::matmul(adj_dpre, l.u, nd);
        adj_dpre = std::move(nd);
      }
    }
  }
  if (x_adj) {
    if (x_adj->empty()) *x_adj = std::move(xa);
    else add_into(*x_adj, xa);
  }
  if (dir_adj && tangent) {
    if (dir_adj->empty()) *dir_adj = std::move(da);
    else add_into(*dir_adj, da);
  }
}

Matrix IcnnNet::input_gradient(const Matrix& x) const {
  IcnnTape tape;
  forward(x, &tape);
  Vector ones(x.rows(), 1.0);
  Matrix grad;
  backward(tape, ones, {}, nullptr, &grad, nullptr);
  return grad;
}

void IcnnNet::project() {
  ++generation_;
  for (auto& l : layers_)
    for (double& u : l.u.values())
      if (u < 0.0) u = 0.0;
}

bool IcnnNet::convex_weights_nonnegative() const {
  for (const auto& l : layers_)
    for (double u : l.u.values())
      if (u < 0.0) return false;
  return true;
}

ParamList IcnnNet::parameters() {
  ++generation_;
  ParamList p;
  for (auto& l : layers_) {
    p.emplace_back(l.w.values());
    if (!l.u.empty()) p.emplace_back(l.u.values());
    p.emplace_back(l.b);
  }
  return p;
}

ConstParamList IcnnNet::parameters() const {
  ConstParamList p;
  for (const auto& l : layers_) {
    p.emplace_back(l.w.values());
    if (!l.u.empty()) p.emplace_back(l.u.values());
    p.emplace_back(l.b);
  }
  return p;
}

std::vector<bool> IcnnNet::convex_mask() const {
  std::vector<bool> mask;
  for (const auto& l : layers_) {
    mask.push_back(false);
    if (!l.u.empty()) mask.push_back(true);
    mask.push_back(false);
  }
  return mask;
}

nlohmann::json IcnnNet::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_)
    layers.push_back({{"w", matrix_to_json(l.w)}, {"u", matrix_to_json(l.u)}, {"b", l.b}});
  return {{"type", "icnn"}, {"width", width_}, {"layers", layers}};
}

IcnnNet IcnnNet::from_json(const nlohmann::json& j) {
  if (j.at("type") != "icnn") throw std::invalid_argument("IcnnNet::from_json: not an ICNN");
  std::vector<IcnnLayer> layers;
  for (const auto& lj : j.at("layers"))
    layers.push_back({matrix_from_json(lj.at("w")), matrix_from_json(lj.at("u")), lj.at("b").get<Vector>()});
  return IcnnNet(std::move(layers), j.at("width").get<double>());
}

}  // namespace sbcq::diffcore
