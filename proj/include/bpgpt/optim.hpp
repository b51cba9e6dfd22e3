#pragma once

#include "bpgpt/nn.hpp"

#include <vector>

namespace bpgpt::optim {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay. Parameters without an accumulated
// gradient in a step are left untouched.
class AdamW {
 public:
  AdamW(std::vector<ag::Var> params, AdamWConfig config);
  void step(double lr);
  long steps() const { return t_; }

 private:
  std::vector<ag::Var> params_;
  std::vector<ag::Matrix> m_;
  std::vector<ag::Matrix> v_;
  AdamWConfig config_;
  long t_ = 0;
};

// Scales gradients in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::vector<ag::Var>& params, double max_norm);

// Trainable parameters of the given sets, in order.
std::vector<ag::Var> trainable(std::initializer_list<const nn::ParameterSet*> sets);

}  // namespace bpgpt::optim
