#pragma once

// Independent reference implementations written as plain loops over raw
// values, with no shared code beyond the LM forward pass.

#include "bpgpt/lm.hpp"

#include <cmath>
#include <vector>

namespace bpgpt::testing {

inline double loop_cosine(const ag::Matrix& a, const ag::Matrix& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      dot += a(r, c) * b(r, c);
      na += a(r, c) * a(r, c);
      nb += b(r, c) * b(r, c);
    }
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Per-sample positive and negative similarity sums, then the batch mean of
// -log(Sp/Sn) (or -log(Sp/(Sp+Sn)) when info_nce is set).
inline double loop_contrastive(const std::vector<ag::Matrix>& brain, const std::vector<ag::Matrix>& text,
                               double tau, bool info_nce = false) {
  const std::size_t n = brain.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double sp = std::exp(loop_cosine(brain[i], text[i]) / tau);
    double sn = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      sn += std::exp(loop_cosine(brain[i], brain[j]) / tau);
      sn += std::exp(loop_cosine(brain[i], text[j]) / tau);
    }
    total += info_nce ? -std::log(sp / (sp + sn)) : -std::log(sp / sn);
  }
  return total / double(n);
}

// Token-mean negative log-likelihood by explicit log-sum-exp over each
// logit row of the LM forward pass.
inline double loop_reconstruction(const lm::DecoderLM& lm, const std::vector<PromptSeq>& prompts,
                                  const std::vector<lm::TokenSeq>& targets) {
  double nll = 0.0;
  long count = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const ag::Matrix logits = lm.forward(prompts[i], targets[i]).value();
    const Eigen::Index k = prompts[i].length();
    for (std::size_t j = 0; j < targets[i].size(); ++j) {
      const Eigen::Index row = k + Eigen::Index(j) - 1;
      double mx = logits(row, 0);
      for (Eigen::Index v = 1; v < logits.cols(); ++v) mx = std::max(mx, logits(row, v));
      double z = 0.0;
      for (Eigen::Index v = 0; v < logits.cols(); ++v) z += std::exp(logits(row, v) - mx);
      nll -= logits(row, targets[i][j]) - mx - std::log(z);
      ++count;
    }
  }
  return nll / double(count);
}

}  // namespace bpgpt::testing
