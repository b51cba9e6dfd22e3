#include "bpgpt/objectives.hpp"

#include "bpgpt/error.hpp"

#include <cmath>
#include <numeric>

namespace bpgpt::objectives {

using ag::Matrix;
using ag::Var;

namespace {

Eigen::VectorXd pooled(const PromptSeq& p, SimilarityPooling pooling) {
  const Matrix& m = p.value();
  if (pooling == SimilarityPooling::mean) return m.colwise().mean().transpose();
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double na = a.norm();
  double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

// Row-normalises z; zero rows stay zero (their cosine is defined as 0).
Matrix normalize_rows(const Matrix& z, Eigen::VectorXd& norms) {
  norms = z.rowwise().norm();
  Matrix u = z;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    if (norms(i) > 0.0) u.row(i) /= norms(i);
    else u.row(i).setZero();
  }
  return u;
}

Matrix normalize_backward(const Matrix& u, const Eigen::VectorXd& norms, const Matrix& du) {
  Matrix dz = Matrix::Zero(u.rows(), u.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    if (norms(i) == 0.0) continue;
    double proj = u.row(i).dot(du.row(i));
    dz.row(i) = (du.row(i) - u.row(i) * proj) / norms(i);
  }
  return dz;
}

// Fused contrastive term over pooled prompt rows zb, zt [N x m].
Var contrastive_core(const Var& zb, const Var& zt, double tau, ContrastiveForm form) {
  const Eigen::Index n = zb.rows();
  Eigen::VectorXd nb;
  Eigen::VectorXd nt;
  Matrix u = normalize_rows(zb.value(), nb);
  Matrix v = normalize_rows(zt.value(), nt);
  Matrix ebb = ((u * u.transpose()) / tau).array().exp();
  Matrix ebt = ((u * v.transpose()) / tau).array().exp();

  Eigen::VectorXd denom(n);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double sn = ebb.row(i).sum() - ebb(i, i) + ebt.row(i).sum() - ebt(i, i);
    double sp = ebt(i, i);
    denom(i) = form == ContrastiveForm::literal ? sn : sp + sn;
    loss += -std::log(sp) + std::log(denom(i));
  }
  Matrix out(1, 1);
  out(0, 0) = loss / double(n);

  return ag::make_result(
      std::move(out), {zb, zt},
      [u = std::move(u), v = std::move(v), nb = std::move(nb), nt = std::move(nt),
       ebb = std::move(ebb), ebt = std::move(ebt), denom = std::move(denom), tau, form,
       n](ag::Node& node) {
        const double g = node.grad(0, 0) / double(n);
        Matrix gbb(n, n);
        Matrix gbt(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
          const double w = g / (tau * denom(i));
          gbb.row(i) = ebb.row(i) * w;
          gbt.row(i) = ebt.row(i) * w;
          gbb(i, i) = 0.0;
          gbt(i, i) = -g / tau + (form == ContrastiveForm::info_nce ? ebt(i, i) * w : 0.0);
        }
        Matrix du = (gbb + gbb.transpose()) * u + gbt * v;
        Matrix dv = gbt.transpose() * u;
        ag::Node& in_b = *node.inputs[0];
        ag::Node& in_t = *node.inputs[1];
        if (in_b.requires_grad) in_b.accumulate(normalize_backward(u, nb, du));
        if (in_t.requires_grad) in_t.accumulate(normalize_backward(v, nt, dv));
      });
}

Var pool_prompts(std::span<const PromptSeq> prompts, SimilarityPooling pooling) {
  std::vector<Var> parts;
  parts.reserve(prompts.size());
  for (const auto& p : prompts) {
    parts.push_back(pooling == SimilarityPooling::mean ? ag::mean_rows(p.vectors) : p.vectors);
  }
  return pooling == SimilarityPooling::mean ? ag::concat_rows(parts) : ag::stack_flatten(parts);
}

}  // namespace

void Batch::validate() const {
  if (token_targets.empty()) throw ValidationError("empty batch");
  if (!prompts_brain.empty() && prompts_brain.size() != token_targets.size()) {
    throw ShapeError("batch: brain prompts and targets differ in length");
  }
  if (!prompts_text.empty() && prompts_text.size() != token_targets.size()) {
    throw ShapeError("batch: text prompts and targets differ in length");
  }
}

Var reconstruction_loss(const lm::DecoderLM& lm, std::span<const PromptSeq> prompts,
                        std::span<const TokenSeq> targets) {
  if (prompts.size() != targets.size()) throw ShapeError("prompts and targets differ in length");
  if (targets.empty()) throw ValidationError("reconstruction loss over an empty batch");
  std::vector<Var> sums;
  sums.reserve(targets.size());
  std::size_t n_tokens = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const TokenSeq& target = targets[i];
    if (target.empty()) throw ValidationError("empty target sequence at batch index " + std::to_string(i));
    const int k = prompts[i].length();
    if (k < 1) throw ShapeError("reconstruction loss needs a prompt of length >= 1");
    Var logits = lm.forward(prompts[i], target);
    std::vector<int> rows(target.size());
    std::iota(rows.begin(), rows.end(), k - 1);
    sums.push_back(ag::nll_sum(logits, rows, target));
    n_tokens += target.size();
  }
  return ag::scale(ag::sum(sums), 1.0 / double(n_tokens));
}

double prompt_cosine(const PromptSeq& a, const PromptSeq& b, SimilarityPooling pooling) {
  if (a.value().rows() != b.value().rows() || a.value().cols() != b.value().cols()) {
    throw ShapeError("prompt shapes differ");
  }
  return cosine(pooled(a, pooling), pooled(b, pooling));
}

double positive_similarity(const PromptSeq& brain, const PromptSeq& text, double tau,
                           SimilarityPooling pooling) {
  if (tau <= 0.0) throw ConfigError("temperature must be > 0");
  return std::exp(prompt_cosine(brain, text, pooling) / tau);
}

double negative_similarity(const Batch& batch, std::size_t i, double tau,
                           SimilarityPooling pooling) {
  if (tau <= 0.0) throw ConfigError("temperature must be > 0");
  const std::size_t n = batch.prompts_brain.size();
  if (n < 2) throw ValidationError("negative similarity needs a batch of at least 2");
  if (batch.prompts_text.size() != n) throw ShapeError("batch prompt lists differ in length");
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    s += std::exp(prompt_cosine(batch.prompts_brain[i], batch.prompts_brain[j], pooling) / tau);
    s += std::exp(prompt_cosine(batch.prompts_brain[i], batch.prompts_text[j], pooling) / tau);
  }
  return s;
}

Var contrastive_loss(std::span<const PromptSeq> prompts_brain,
                     std::span<const PromptSeq> prompts_text, const ContrastiveOptions& options) {
  if (options.tau <= 0.0) throw ConfigError("temperature must be > 0");
  if (prompts_brain.size() != prompts_text.size()) throw ShapeError("prompt lists differ in length");
  if (prompts_brain.size() < 2) throw ValidationError("contrastive loss needs a batch of at least 2");
  Var zb = pool_prompts(prompts_brain, options.pooling);
  Var zt = pool_prompts(prompts_text, options.pooling);
  if (zb.cols() != zt.cols()) throw ShapeError("brain and text prompts differ in shape");
  return contrastive_core(zb, zt, options.tau, options.form);
}

TotalLoss total_loss(const lm::DecoderLM& lm, const Batch& batch, double alpha,
                     const ContrastiveOptions& options) {
  batch.validate();
  TotalLoss out;
  out.report.alpha = alpha;
  out.report.tau = options.tau;
  Var brain = brain_decoding_loss(lm, batch.prompts_brain, batch.token_targets);
  out.report.l_brain = brain.scalar();
  out.total = brain;
  if (alpha != 0.0) {
    if (batch.size() < 2) {
      out.report.contrast_skipped = true;
    } else {
      Var c = contrastive_loss(batch.prompts_brain, batch.prompts_text, options);
      out.report.l_contrast = c.scalar();
      std::vector<Var> parts = {brain, ag::scale(c, alpha)};
      out.total = ag::sum(parts);
    }
  }
  out.report.l_total = out.total.scalar();
  return out;
}

}  // namespace bpgpt::objectives
