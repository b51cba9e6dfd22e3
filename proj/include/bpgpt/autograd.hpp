#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value is a 2-D matrix; scalars are 1x1.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace bpgpt::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
  bool has_grad() const { return grad.size() != 0; }
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  // Gradient, or a zero matrix of the value's shape if none accumulated.
  Matrix grad() const;
  void zero_grad();

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
  friend Var make_result(Matrix value, std::vector<Var> inputs,
                         std::function<void(Node&)> backward_fn);
};

// Builds an op output. The backward closure is dropped, and no inputs are
// retained, when no input requires a gradient or grad mode is off.
Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

// Runs reverse accumulation from a 1x1 output.
void backward(const Var& output);

// RAII guard that disables graph construction on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- ops -------------------------------------------------------------------

Var constant(Matrix value);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var matmul(const Var& a, const Var& b);
// x [n x in] * w [in x out] + b [1 x out]
Var linear(const Var& x, const Var& w, const Var& b);
Var gelu(const Var& x);
// Row-wise layer normalisation with affine gain/bias [1 x d].
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// Multi-head scaled dot-product self-attention. qkv is [T x 3d], laid out
// as [Q | K | V]; returns [T x d].
Var self_attention(const Var& qkv, int n_heads, bool causal);
// Gathers rows of table.
Var embedding(const Var& table, std::span<const int> ids);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count);
// Flattens each [k x d] part row-major into one row of an [n x k*d] matrix.
Var stack_flatten(std::span<const Var> parts);
Var mean_rows(const Var& x);
// Sum over the listed rows of -log softmax(logits.row(r))[target].
Var nll_sum(const Var& logits, std::span<const int> rows, std::span<const int> targets);
Var sum(std::span<const Var> scalars);

}  // namespace bpgpt::ag
