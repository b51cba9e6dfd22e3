#include "bpgpt/optim.hpp"

#include <cmath>

namespace bpgpt::optim {

AdamW::AdamW(std::vector<ag::Var> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.push_back(ag::Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(ag::Matrix::Zero(p.rows(), p.cols()));
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, double(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, double(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& node = *params_[i].node();
    if (!node.has_grad()) continue;
    const ag::Matrix& g = node.grad;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    node.value.array() -= lr * ((m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps) +
                                config_.weight_decay * node.value.array());
  }
}

double clip_grad_norm(std::vector<ag::Var>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.node()->has_grad()) sq += p.node()->grad.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params) {
      if (p.node()->has_grad()) p.node()->grad *= s;
    }
  }
  return norm;
}

std::vector<ag::Var> trainable(std::initializer_list<const nn::ParameterSet*> sets) {
  std::vector<ag::Var> out;
  for (const auto* s : sets) {
    if (!s->trainable()) continue;
    for (const auto& p : s->items()) out.push_back(p.var);
  }
  return out;
}

}  // namespace bpgpt::optim
