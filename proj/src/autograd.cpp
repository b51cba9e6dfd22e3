#include "bpgpt/autograd.hpp"

#include "bpgpt/error.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <unordered_set>

namespace bpgpt::ag {

namespace {

thread_local bool g_grad_enabled = true;

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

Node& in(Node& n, std::size_t i) { return *n.inputs[i]; }

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Matrix Var::grad() const {
  if (node_->has_grad()) return node_->grad;
  return Matrix::Zero(node_->value.rows(), node_->value.cols());
}

void Var::zero_grad() { node_->grad.resize(0, 0); }

Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  Var out;
  out.node_ = std::make_shared<Node>();
  out.node_->value = std::move(value);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& v : inputs) any = any || v.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->inputs.reserve(inputs.size());
  for (auto& v : inputs) out.node_->inputs.push_back(v.node());
  out.node_->backward_fn = std::move(backward_fn);
  return out;
}

void backward(const Var& output) {
  if (output.rows() != 1 || output.cols() != 1) {
    throw ShapeError("backward: output must be 1x1");
  }
  if (!output.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(output.node().get(), 0);
  seen.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !seen.contains(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  output.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
    // Interior gradients are no longer needed once propagated.
    if (node->backward_fn) node->grad.resize(0, 0);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var constant(Matrix value) { return Var(std::move(value), false); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& n) {
    if (in(n, 0).requires_grad) in(n, 0).accumulate(n.grad);
    if (in(n, 1).requires_grad) in(n, 1).accumulate(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& n) {
    if (in(n, 0).requires_grad) in(n, 0).accumulate(n.grad);
    if (in(n, 1).requires_grad) in(n, 1).accumulate(-n.grad);
  });
}

Var scale(const Var& a, double c) {
  return make_result(a.value() * c, {a}, [c](Node& n) { in(n, 0).accumulate(n.grad * c); });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  return make_result(a.value() * b.value(), {a, b}, [](Node& n) {
    Node& a = in(n, 0);
    Node& b = in(n, 1);
    if (a.requires_grad) a.accumulate(n.grad * b.value.transpose());
    if (b.requires_grad) b.accumulate(a.value.transpose() * n.grad);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x.cols() != w.rows()) {
    throw ShapeError("linear: input width " + std::to_string(x.cols()) + " != " +
                     std::to_string(w.rows()));
  }
  if (b.rows() != 1 || b.cols() != w.cols()) throw ShapeError("linear: bias shape");
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return make_result(std::move(out), {x, w, b}, [](Node& n) {
    Node& x = in(n, 0);
    Node& w = in(n, 1);
    Node& b = in(n, 2);
    if (x.requires_grad) x.accumulate(n.grad * w.value.transpose());
    if (w.requires_grad) w.accumulate(x.value.transpose() * n.grad);
    if (b.requires_grad) b.accumulate(n.grad.colwise().sum());
  });
}

Var gelu(const Var& x) {
  constexpr double kC = 0.044715;
  const double s = std::sqrt(2.0 / std::numbers::pi);
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.size(); ++i) {
    double v = xv.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::tanh(s * (v + kC * v * v * v)));
  }
  return make_result(std::move(out), {x}, [s](Node& n) {
    Node& x = in(n, 0);
    Matrix g(x.value.rows(), x.value.cols());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      double v = x.value.data()[i];
      double t = std::tanh(s * (v + kC * v * v * v));
      double dt = (1.0 - t * t) * s * (1.0 + 3.0 * kC * v * v);
      g.data()[i] = n.grad.data()[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
    x.accumulate(g);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Matrix& xv = x.value();
  const Eigen::Index d = xv.cols();
  if (gamma.cols() != d || beta.cols() != d) throw ShapeError("layer_norm: affine width");
  Matrix xhat(xv.rows(), d);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    double mean = xv.row(r).mean();
    double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = xhat;
  out.array().rowwise() *= gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return make_result(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
                       Node& x = in(n, 0);
                       Node& g = in(n, 1);
                       Node& b = in(n, 2);
                       if (g.requires_grad) {
                         g.accumulate((n.grad.array() * xhat.array()).colwise().sum().matrix());
                       }
                       if (b.requires_grad) b.accumulate(n.grad.colwise().sum());
                       if (x.requires_grad) {
                         Matrix dxhat = n.grad;
                         dxhat.array().rowwise() *= g.value.row(0).array();
                         Matrix dx(dxhat.rows(), dxhat.cols());
                         for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                           double m1 = dxhat.row(r).mean();
                           double m2 = dxhat.row(r).dot(xhat.row(r)) / double(dxhat.cols());
                           dx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) *
                                       inv_std(r);
                         }
                         x.accumulate(dx);
                       }
                     });
}

Var self_attention(const Var& qkv, int n_heads, bool causal) {
  const Matrix& v = qkv.value();
  if (v.cols() % 3 != 0) throw ShapeError("self_attention: qkv width not divisible by 3");
  const Eigen::Index T = v.rows();
  const Eigen::Index d = v.cols() / 3;
  if (n_heads <= 0 || d % n_heads != 0) throw ShapeError("self_attention: heads must divide width");
  const Eigen::Index dh = d / n_heads;
  const double sc = 1.0 / std::sqrt(double(dh));

  std::vector<Matrix> probs(n_heads);
  Matrix out(T, d);
  for (int h = 0; h < n_heads; ++h) {
    auto q = v.block(0, h * dh, T, dh);
    auto k = v.block(0, d + h * dh, T, dh);
    auto val = v.block(0, 2 * d + h * dh, T, dh);
    Matrix s = (q * k.transpose()) * sc;
    for (Eigen::Index i = 0; i < T; ++i) {
      Eigen::Index width = causal ? i + 1 : T;
      double mx = s.row(i).head(width).maxCoeff();
      double z = 0.0;
      for (Eigen::Index j = 0; j < width; ++j) {
        s(i, j) = std::exp(s(i, j) - mx);
        z += s(i, j);
      }
      s.row(i).head(width) /= z;
      if (width < T) s.row(i).tail(T - width).setZero();
    }
    out.block(0, h * dh, T, dh) = s * val;
    probs[h] = std::move(s);
  }
  return make_result(std::move(out), {qkv},
                     [probs = std::move(probs), n_heads, d, dh, sc](Node& n) {
                       Node& x = in(n, 0);
                       const Matrix& v = x.value;
                       const Eigen::Index T = v.rows();
                       Matrix g = Matrix::Zero(T, 3 * d);
                       for (int h = 0; h < n_heads; ++h) {
                         const Matrix& p = probs[h];
                         auto q = v.block(0, h * dh, T, dh);
                         auto k = v.block(0, d + h * dh, T, dh);
                         auto val = v.block(0, 2 * d + h * dh, T, dh);
                         auto dout = n.grad.block(0, h * dh, T, dh);
                         g.block(0, 2 * d + h * dh, T, dh) = p.transpose() * dout;
                         Matrix dp = dout * val.transpose();
                         Eigen::VectorXd rs = (dp.array() * p.array()).rowwise().sum();
                         Matrix ds = p.array() * (dp.colwise() - rs).array();
                         g.block(0, h * dh, T, dh) = (ds * k) * sc;
                         g.block(0, d + h * dh, T, dh) = (ds.transpose() * q) * sc;
                       }
                       x.accumulate(g);
                     });
}

Var embedding(const Var& table, std::span<const int> ids) {
  const Matrix& t = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= t.rows()) throw ShapeError("embedding: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = t.row(ids[i]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return make_result(std::move(out), {table}, [idv = std::move(idv)](Node& n) {
    Node& t = in(n, 0);
    Matrix g = Matrix::Zero(t.value.rows(), t.value.cols());
    for (std::size_t i = 0; i < idv.size(); ++i) g.row(idv[i]) += n.grad.row(Eigen::Index(i));
    t.accumulate(g);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    offsets.push_back(r);
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_result(std::move(out), std::move(inputs), [offsets = std::move(offsets)](Node& n) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      Node& p = *n.inputs[i];
      if (p.requires_grad) p.accumulate(n.grad.middleRows(offsets[i], p.value.rows()));
    }
  });
}

Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw ShapeError("slice_rows: range");
  return make_result(x.value().middleRows(start, count), {x}, [start, count](Node& n) {
    Node& x = in(n, 0);
    Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
    g.middleRows(start, count) = n.grad;
    x.accumulate(g);
  });
}

Var stack_flatten(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("stack_flatten: no inputs");
  const Eigen::Index width = parts.front().value().size();
  Matrix out(static_cast<Eigen::Index>(parts.size()), width);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Matrix& p = parts[i].value();
    if (p.size() != width) throw ShapeError("stack_flatten: size mismatch");
    out.row(Eigen::Index(i)) = Eigen::Map<const RowVector>(p.data(), width);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_result(std::move(out), std::move(inputs), [](Node& n) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      Node& p = *n.inputs[i];
      if (!p.requires_grad) continue;
      Matrix g(p.value.rows(), p.value.cols());
      Eigen::Map<RowVector>(g.data(), g.size()) = n.grad.row(Eigen::Index(i));
      p.accumulate(g);
    }
  });
}

Var mean_rows(const Var& x) {
  const double inv = 1.0 / double(x.rows());
  return make_result(x.value().colwise().mean(), {x}, [inv](Node& n) {
    Node& x = in(n, 0);
    Matrix g = n.grad.replicate(x.value.rows(), 1) * inv;
    x.accumulate(g);
  });
}

Var nll_sum(const Var& logits, std::span<const int> rows, std::span<const int> targets) {
  if (rows.size() != targets.size()) throw ShapeError("nll_sum: rows/targets length");
  const Matrix& z = logits.value();
  double total = 0.0;
  Matrix probs(static_cast<Eigen::Index>(rows.size()), z.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= z.rows()) throw ShapeError("nll_sum: row out of range");
    if (targets[i] < 0 || targets[i] >= z.cols()) throw ShapeError("nll_sum: target id");
    auto row = z.row(rows[i]);
    double mx = row.maxCoeff();
    double lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(targets[i]);
    probs.row(Eigen::Index(i)) = (row.array() - lse).exp();
  }
  std::vector<int> rv(rows.begin(), rows.end());
  std::vector<int> tv(targets.begin(), targets.end());
  Matrix out(1, 1);
  out(0, 0) = total;
  return make_result(std::move(out), {logits},
                     [probs = std::move(probs), rv = std::move(rv), tv = std::move(tv)](Node& n) {
                       Node& z = in(n, 0);
                       const double g = n.grad(0, 0);
                       Matrix dz = Matrix::Zero(z.value.rows(), z.value.cols());
                       for (std::size_t i = 0; i < rv.size(); ++i) {
                         dz.row(rv[i]) += probs.row(Eigen::Index(i)) * g;
                         dz(rv[i], tv[i]) -= g;
                       }
                       z.accumulate(dz);
                     });
}

Var sum(std::span<const Var> scalars) {
  Matrix out = Matrix::Zero(1, 1);
  for (const auto& s : scalars) {
    if (s.rows() != 1 || s.cols() != 1) throw ShapeError("sum: expects 1x1 inputs");
    out(0, 0) += s.scalar();
  }
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  return make_result(std::move(out), std::move(inputs), [](Node& n) {
    for (auto& p : n.inputs) {
      if (p->requires_grad) p->accumulate(n.grad);
    }
  });
}

}  // namespace bpgpt::ag
