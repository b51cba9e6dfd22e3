#pragma once

// Training objectives: prompt-conditioned reconstruction cross-entropy
// (text and brain sides), prompt contrastive alignment, and their sum.

#include "bpgpt/lm.hpp"
#include "bpgpt/prompt_seq.hpp"

#include <optional>
#include <span>
#include <vector>

namespace bpgpt::objectives {

using lm::TokenSeq;

enum class ContrastiveForm {
  literal,   // -log(S_p / S_n)
  info_nce,  // -log(S_p / (S_p + S_n))
};

enum class SimilarityPooling {
  flatten,  // cosine of the row-major flattened [k*d] vectors
  mean,     // cosine of the mean prompt vector
};

struct ContrastiveOptions {
  double tau = 0.1;
  ContrastiveForm form = ContrastiveForm::literal;
  SimilarityPooling pooling = SimilarityPooling::flatten;
};

struct Batch {
  std::vector<PromptSeq> prompts_brain;
  std::vector<PromptSeq> prompts_text;
  std::vector<TokenSeq> token_targets;

  std::size_t size() const { return token_targets.size(); }
  void validate() const;
};

struct LossReport {
  std::optional<double> l_text;
  std::optional<double> l_brain;
  std::optional<double> l_contrast;  // absent when alpha == 0 or N < 2
  double l_total = 0.0;
  double alpha = 0.0;
  double tau = 0.1;
  bool contrast_skipped = false;  // alpha > 0 but the batch had one sample
};

// Token-mean negative log-likelihood of the targets given their prompts.
ag::Var reconstruction_loss(const lm::DecoderLM& lm, std::span<const PromptSeq> prompts,
                            std::span<const TokenSeq> targets);

inline ag::Var text_reconstruction_loss(const lm::DecoderLM& lm,
                                        std::span<const PromptSeq> prompts_text,
                                        std::span<const TokenSeq> targets) {
  return reconstruction_loss(lm, prompts_text, targets);
}

inline ag::Var brain_decoding_loss(const lm::DecoderLM& lm,
                                   std::span<const PromptSeq> prompts_brain,
                                   std::span<const TokenSeq> targets) {
  return reconstruction_loss(lm, prompts_brain, targets);
}

// Cosine between two prompts under the chosen pooling; 0 if either is zero.
double prompt_cosine(const PromptSeq& a, const PromptSeq& b,
                     SimilarityPooling pooling = SimilarityPooling::flatten);

// exp(cos(P_B, P_T) / tau)
double positive_similarity(const PromptSeq& brain, const PromptSeq& text, double tau,
                           SimilarityPooling pooling = SimilarityPooling::flatten);

// sum_{j != i} exp(cos(P_B^i, P_B^j) / tau) + exp(cos(P_B^i, P_T^j) / tau)
double negative_similarity(const Batch& batch, std::size_t i, double tau,
                           SimilarityPooling pooling = SimilarityPooling::flatten);

// Mean over the batch of the per-sample contrastive term; differentiable
// with respect to both prompt sides. Requires N >= 2.
ag::Var contrastive_loss(std::span<const PromptSeq> prompts_brain,
                         std::span<const PromptSeq> prompts_text,
                         const ContrastiveOptions& options = {});

struct TotalLoss {
  ag::Var total;
  LossReport report;
};

// L = L_brain + alpha * L_C. The contrastive term is not evaluated when
// alpha == 0, and is skipped (flagged in the report) when N < 2.
TotalLoss total_loss(const lm::DecoderLM& lm, const Batch& batch, double alpha,
                     const ContrastiveOptions& options = {});

}  // namespace bpgpt::objectives
