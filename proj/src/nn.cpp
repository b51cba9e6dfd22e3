#include "bpgpt/nn.hpp"

#include "bpgpt/error.hpp"

#include <cmath>
#include <cstring>

namespace bpgpt::nn {

Var ParameterSet::add(std::string name, Matrix init) {
  Var v(std::move(init), trainable_);
  items_.push_back({std::move(name), v});
  return v;
}

const Var& ParameterSet::get(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return p.var;
  }
  throw std::out_of_range("no parameter named " + name);
}

Eigen::Index ParameterSet::scalar_count() const {
  Eigen::Index n = 0;
  for (const auto& p : items_) n += p.var.value().size();
  return n;
}

void ParameterSet::set_trainable(bool flag) {
  trainable_ = flag;
  for (auto& p : items_) {
    Var v = p.var;
    v.set_requires_grad(flag);
    if (!flag) v.zero_grad();
  }
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) {
    Var v = p.var;
    v.zero_grad();
  }
}

std::uint64_t ParameterSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : items_) {
    const Matrix& m = p.var.value();
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
    for (std::size_t i = 0; i < std::size_t(m.size()) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

Matrix truncated_normal(Eigen::Index rows, Eigen::Index cols, double sigma, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double z = dist(rng);
    while (std::abs(z) > 2.0) z = dist(rng);
    m.data()[i] = z * sigma;
  }
  return m;
}

Linear Linear::create(ParameterSet& params, const std::string& name, Eigen::Index in,
                      Eigen::Index out, Rng& rng, double sigma) {
  Linear l;
  l.weight = params.add(name + ".weight", truncated_normal(in, out, sigma, rng));
  l.bias = params.add(name + ".bias", Matrix::Zero(1, out));
  return l;
}

LayerNorm LayerNorm::create(ParameterSet& params, const std::string& name, Eigen::Index width) {
  LayerNorm ln;
  ln.gamma = params.add(name + ".gamma", Matrix::Ones(1, width));
  ln.beta = params.add(name + ".beta", Matrix::Zero(1, width));
  return ln;
}

TransformerBlock TransformerBlock::create(ParameterSet& params, const std::string& name,
                                          Eigen::Index width, int heads, bool causal, Rng& rng) {
  if (heads <= 0 || width % heads != 0) {
    throw ConfigError("attention heads (" + std::to_string(heads) + ") must divide width (" +
                      std::to_string(width) + ")");
  }
  TransformerBlock b;
  b.ln_attn = LayerNorm::create(params, name + ".ln_attn", width);
  b.qkv = Linear::create(params, name + ".qkv", width, 3 * width, rng);
  b.attn_out = Linear::create(params, name + ".attn_out", width, width, rng);
  b.ln_mlp = LayerNorm::create(params, name + ".ln_mlp", width);
  b.mlp_in = Linear::create(params, name + ".mlp_in", width, 4 * width, rng);
  b.mlp_out = Linear::create(params, name + ".mlp_out", 4 * width, width, rng);
  b.heads = heads;
  b.causal = causal;
  return b;
}

Var TransformerBlock::operator()(const Var& x) const {
  Var h = ag::self_attention(qkv(ln_attn(x)), heads, causal);
  Var y = ag::add(x, attn_out(h));
  Var m = mlp_out(ag::gelu(mlp_in(ln_mlp(y))));
  return ag::add(y, m);
}

}  // namespace bpgpt::nn
