#pragma once

// Parameter registry and the transformer building blocks shared by the
// decoder LM, the prompt mappers and the frozen text encoder.

#include "bpgpt/autograd.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace bpgpt::nn {

using ag::Matrix;
using ag::Var;
using Rng = std::mt19937_64;

struct Parameter {
  std::string name;
  Var var;
};

// Ordered, named collection of trainable tensors owned by one model.
class ParameterSet {
 public:
  Var add(std::string name, Matrix init);

  const std::vector<Parameter>& items() const { return items_; }
  const Var& get(const std::string& name) const;
  std::size_t size() const { return items_.size(); }
  Eigen::Index scalar_count() const;

  // Frozen parameters do not record gradients and are skipped by optimizers.
  void set_trainable(bool flag);
  bool trainable() const { return trainable_; }
  void zero_grad();

  // FNV-1a over every parameter byte, in registration order.
  std::uint64_t checksum() const;

 private:
  std::vector<Parameter> items_;
  bool trainable_ = true;
};

// Samples N(0, sigma^2) truncated to +-2 sigma by rejection.
Matrix truncated_normal(Eigen::Index rows, Eigen::Index cols, double sigma, Rng& rng);

struct Linear {
  Var weight;  // [in x out]
  Var bias;    // [1 x out]

  static Linear create(ParameterSet& params, const std::string& name, Eigen::Index in,
                       Eigen::Index out, Rng& rng, double sigma = 0.02);
  Var operator()(const Var& x) const { return ag::linear(x, weight, bias); }
};

struct LayerNorm {
  Var gamma;
  Var beta;

  static LayerNorm create(ParameterSet& params, const std::string& name, Eigen::Index width);
  Var operator()(const Var& x) const { return ag::layer_norm(x, gamma, beta); }
};

// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
struct TransformerBlock {
  LayerNorm ln_attn;
  Linear qkv;
  Linear attn_out;
  LayerNorm ln_mlp;
  Linear mlp_in;
  Linear mlp_out;
  int heads = 1;
  bool causal = false;

  static TransformerBlock create(ParameterSet& params, const std::string& name,
                                 Eigen::Index width, int heads, bool causal, Rng& rng);
  Var operator()(const Var& x) const;
};

}  // namespace bpgpt::nn
