#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// Every op returns a Var holding its value. When gradients are enabled on the
// calling thread and at least one input requires a gradient, the op also records
// a backward closure; otherwise the result is a constant and nothing is retained.

#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace promptseg::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node &)> backward_fn;

  void accumulate(const Matrix &g);
  bool has_grad() const { return grad.size() != 0; }
};

class Var {
public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  const Matrix &value() const { return node_->value; }
  Matrix &mutable_value() { return node_->value; }
  const Matrix &grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.resize(0, 0); }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node> &node() const { return node_; }

private:
  friend Var make_op(Matrix, std::initializer_list<Var>, std::function<void(Node &)>);
  friend Var make_op(Matrix, const std::vector<Var> &, std::function<void(Node &)>);
  std::shared_ptr<Node> node_;
};

/// Thread-local switch; inference paths disable recording.
bool grad_enabled();

class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
  bool previous_;
};

Var make_op(Matrix value, std::initializer_list<Var> parents, std::function<void(Node &)> fn);
Var make_op(Matrix value, const std::vector<Var> &parents, std::function<void(Node &)> fn);

/// Propagates `seed` (same shape as root) through the recorded graph.
void backward(const Var &root, const Matrix &seed);
/// Multi-root variant; shared subgraphs receive the summed contributions.
void backward(const std::vector<std::pair<Var, Matrix>> &roots);

Var constant(Matrix value);

Var matmul(const Var &a, const Var &b);
/// a * b^T
Var matmul_nt(const Var &a, const Var &b);
Var add(const Var &a, const Var &b);
/// Adds a 1 x n row to every row of a.
Var add_row(const Var &a, const Var &row);
Var scale(const Var &a, double factor);
Var gelu(const Var &a);
Var relu(const Var &a);
/// Row-wise layer normalization with 1 x n gain and bias.
Var layer_norm(const Var &x, const Var &gamma, const Var &beta, double eps = 1e-6);
Var softmax_rows(const Var &a);
Var slice_cols(const Var &a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var &a, Eigen::Index start, Eigen::Index count);
Var concat_cols(const std::vector<Var> &parts);
Var concat_rows(const std::vector<Var> &parts);
Var reshape(const Var &a, Eigen::Index rows, Eigen::Index cols);

/// Rows are the cells of an h x w grid (row-major); columns hold factor^2 blocks of C
/// channels ordered (dy, dx). Output rows are cells of the (h*factor) x (w*factor) grid.
Var pixel_shuffle(const Var &x, int h, int w, int factor);

/// Bilinear resize of an h x w single-channel map to out_h x out_w (half-pixel centers).
Var resize_bilinear(const Var &grid, int out_h, int out_w);

/// Interpolation matrix used by resize_bilinear along one axis (out x in).
Matrix bilinear_weights(int in_size, int out_size);

} // namespace promptseg::ag
