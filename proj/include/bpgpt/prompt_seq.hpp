#pragma once

#include "bpgpt/autograd.hpp"

namespace bpgpt {

// k ordered prompt vectors living in the decoder's embedding space.
struct PromptSeq {
  ag::Var vectors;  // [k x d]

  PromptSeq() = default;
  explicit PromptSeq(ag::Var v) : vectors(std::move(v)) {}
  explicit PromptSeq(ag::Matrix m) : vectors(std::move(m)) {}

  int length() const { return static_cast<int>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }
  const ag::Matrix& value() const { return vectors.value(); }
};

}  // namespace bpgpt
