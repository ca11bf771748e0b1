#pragma once

// Minimal tape-based reverse-mode differentiation over dense Eigen matrices.
//
// Every value is a 2-D matrix whose rows are batch items. A Tape owns the
// nodes of one computation; nodes are appended in creation order, so the
// reverse of that order is a valid topological order for backprop.

#include <Eigen/Core>

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>

namespace puat {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Which network a parameter belongs to. Gradients are routed per role.
enum class Role { Classifier, Generator, Discriminator, Attacker, Teacher, None };

struct Parameter {
  std::string name;
  Matrix value;
  Role role = Role::None;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar scalar() const;
  bool requires_grad() const;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);

  /// Leaf for a network parameter. Repeated calls within one tape return the
  /// same node, so gradients from every use accumulate in one place. The leaf
  /// requires grad only if its role is tracked.
  Var param(const Parameter& p);

  void track(Role role) { tracked_[static_cast<int>(role)] = true; }
  bool tracked(Role role) const { return tracked_[static_cast<int>(role)]; }

  /// Internal: creates a derived node. `backward` is dropped when no input
  /// requires grad.
  Var record(Matrix value, bool requires_grad, Backward backward);

  void backward(const Var& root);

  /// Gradient of the last backward root with respect to v (zeros if unreached).
  Matrix grad(const Var& v) const;
  Matrix grad(const Parameter& p) const;

  void accumulate(std::size_t id, const Matrix& g);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> params_;
  bool tracked_[6] = {false, false, false, false, false, false};
};

namespace ad {

Var detach(const Var& a);

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
/// a (n x m) + row (1 x m) broadcast over rows.
Var add_row(const Var& a, const Var& row);
/// a (n x m) * col (n x 1) broadcast over columns.
Var scale_rows(const Var& a, const Var& col);
Var scale(const Var& a, Scalar s);
Var add_scalar(const Var& a, Scalar s);
/// s (1 x 1) * a.
Var scale_by(const Var& a, const Var& s);

Var relu(const Var& a);
Var leaky_relu(const Var& a, Scalar slope);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);

Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
/// n x m -> n x 1
Var row_sum(const Var& a);

Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);

/// Mean over rows of -sum_k target[i,k] * log_probs[i,k].
Var cross_entropy(const Var& log_probs, const Matrix& target);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(Scalar s, const Var& a) { return scale(a, s); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

// Image operations. A batch of images is stored one image per row in
// channel-major (C, H, W) order.
struct ImageShape {
  Eigen::Index channels = 1;
  Eigen::Index height = 1;
  Eigen::Index width = 1;
  Eigen::Index size() const { return channels * height * width; }
  Eigen::Index plane() const { return height * width; }
  bool operator==(const ImageShape&) const = default;
};

/// weight: (in_channels * k * k) x out_channels, bias: 1 x out_channels or
/// an empty Var (tape == nullptr).
Var conv2d(const Var& x, const ImageShape& in, const Var& weight, const Var& bias,
           Eigen::Index kernel, Eigen::Index stride, Eigen::Index padding, ImageShape* out);
ImageShape conv_output_shape(const ImageShape& in, Eigen::Index out_channels, Eigen::Index kernel,
                             Eigen::Index stride, Eigen::Index padding);

Var upsample2x(const Var& x, const ImageShape& in);
Var avg_pool2x(const Var& x, const ImageShape& in);
/// n x (C*H*W) -> n x C
Var global_avg_pool(const Var& x, const ImageShape& in);
/// n x C -> n x (C*H*W), each channel value repeated over the plane.
Var broadcast_planes(const Var& v, Eigen::Index height, Eigen::Index width);

struct BatchNormState {
  RowVector running_mean;
  RowVector running_var;
  Scalar momentum = 0.1;
  Scalar eps = 1e-5;
};

enum class NormMode {
  Train,            // batch statistics, running statistics updated
  TrainFrozenStats, // batch statistics, running statistics untouched
  Eval              // running statistics
};

/// Per-channel normalization over batch and spatial positions.
Var batch_norm(const Var& x, const ImageShape& shape, const Var& gamma, const Var& beta,
               BatchNormState& state, NormMode mode);

/// W / sigma with sigma = u^T W v, u and v held constant.
Var spectral_weight(const Var& w, const Vector& u, const Vector& v);

}  // namespace ad

using ad::operator+;
using ad::operator-;
using ad::operator*;

}  // namespace puat
