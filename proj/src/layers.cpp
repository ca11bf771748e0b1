#include "puat/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace puat {

Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng, Scalar scale) {
  const Scalar bound = scale / std::sqrt(static_cast<Scalar>(fan_in));
  std::uniform_real_distribution<Scalar> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

void power_iterate(const Matrix& w, SpectralNorm& sn, int iterations) {
  if (w.squaredNorm() == 0.0) return;
  if (sn.u.size() != w.rows()) sn.u = Vector::Constant(w.rows(), 1.0 / std::sqrt(static_cast<Scalar>(w.rows())));
  for (int i = 0; i < iterations; ++i) {
    Vector v = w.transpose() * sn.u;
    const Scalar nv = v.norm();
    if (nv == 0.0) break;
    sn.v = v / nv;
    Vector u = w * sn.v;
    const Scalar nu = u.norm();
    if (nu == 0.0) break;
    sn.u = u / nu;
  }
  if (sn.v.size() != w.cols()) {
    Vector v = w.transpose() * sn.u;
    sn.v = v.norm() > 0.0 ? Vector(v / v.norm()) : Vector::Zero(w.cols());
  }
}

Scalar spectral_sigma(const Matrix& w, const SpectralNorm& sn) { return sn.u.dot(w * sn.v); }

Var Linear::forward(Tape& tape, const Var& x) const {
  Var w = tape.param(weight);
  if (spectral) w = ad::spectral_weight(w, sn.u, sn.v);
  return ad::add_row(ad::matmul(x, w), tape.param(bias));
}

Var Conv::forward(Tape& tape, const Var& x, const ad::ImageShape& in, ad::ImageShape* out) const {
  Var w = tape.param(weight);
  if (spectral) w = ad::spectral_weight(w, sn.u, sn.v);
  return ad::conv2d(x, in, w, tape.param(bias), kernel, stride, padding, out);
}

Var BatchNorm::forward(Tape& tape, const Var& x, const ad::ImageShape& shape, ad::NormMode mode) const {
  return ad::batch_norm(x, shape, tape.param(gamma), tape.param(beta), state, mode);
}

std::vector<Parameter*> LayerStore::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : linear) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  for (auto& c : conv) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  }
  for (auto& n : norm) {
    out.push_back(&n.gamma);
    out.push_back(&n.beta);
  }
  for (auto& e : extra) out.push_back(&e);
  return out;
}

std::vector<const Parameter*> LayerStore::parameters() const {
  std::vector<const Parameter*> out;
  for (auto* p : const_cast<LayerStore*>(this)->parameters()) out.push_back(p);
  return out;
}

void LayerStore::set_role(Role role) {
  for (auto* p : parameters()) p->role = role;
}

int LayerStore::add_linear(const std::string& name, Eigen::Index in, Eigen::Index out, Role role, Rng& rng,
                           bool spectral, Scalar init_scale) {
  if (in <= 0 || out <= 0) throw std::invalid_argument("linear layer '" + name + "' needs positive sizes");
  Linear l;
  l.weight = Parameter{name + ".weight", uniform_init(in, out, in, rng, init_scale), role};
  l.bias = Parameter{name + ".bias", uniform_init(1, out, in, rng, init_scale), role};
  l.spectral = spectral;
  if (spectral) {
    std::normal_distribution<Scalar> nd(0.0, 1.0);
    l.sn.u = Vector(in);
    for (Eigen::Index i = 0; i < in; ++i) l.sn.u(i) = nd(rng);
    l.sn.u.normalize();
    power_iterate(l.weight.value, l.sn, 1);
  }
  linear.push_back(std::move(l));
  return static_cast<int>(linear.size()) - 1;
}

int LayerStore::add_conv(const std::string& name, Eigen::Index in_channels, Eigen::Index out_channels,
                         Eigen::Index kernel, Eigen::Index stride, Eigen::Index padding, Role role, Rng& rng,
                         bool spectral) {
  const Eigen::Index fan_in = in_channels * kernel * kernel;
  Conv c;
  c.weight = Parameter{name + ".weight", uniform_init(fan_in, out_channels, fan_in, rng), role};
  c.bias = Parameter{name + ".bias", uniform_init(1, out_channels, fan_in, rng), role};
  c.kernel = kernel;
  c.stride = stride;
  c.padding = padding;
  c.spectral = spectral;
  if (spectral) {
    std::normal_distribution<Scalar> nd(0.0, 1.0);
    c.sn.u = Vector(fan_in);
    for (Eigen::Index i = 0; i < fan_in; ++i) c.sn.u(i) = nd(rng);
    c.sn.u.normalize();
    power_iterate(c.weight.value, c.sn, 1);
  }
  conv.push_back(std::move(c));
  return static_cast<int>(conv.size()) - 1;
}

int LayerStore::add_norm(const std::string& name, Eigen::Index channels, Role role) {
  BatchNorm n;
  n.gamma = Parameter{name + ".gamma", Matrix::Ones(1, channels), role};
  n.beta = Parameter{name + ".beta", Matrix::Zero(1, channels), role};
  n.state.running_mean = RowVector::Zero(channels);
  n.state.running_var = RowVector::Ones(channels);
  norm.push_back(std::move(n));
  return static_cast<int>(norm.size()) - 1;
}

int LayerStore::add_extra(const std::string& name, Matrix value, Role role) {
  extra.push_back(Parameter{name, std::move(value), role});
  return static_cast<int>(extra.size()) - 1;
}

}  // namespace puat
