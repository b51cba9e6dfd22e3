#pragma once

// Backend-agnostic decoder language model surface plus the toy
// decoder-only transformer used for desk-scale runs.

#include "bpgpt/nn.hpp"
#include "bpgpt/prompt_seq.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace bpgpt::lm {

using TokenSeq = std::vector<int>;

inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";

class Vocab {
 public:
  Vocab() = default;
  // Tokens must be unique and include '=', '$', <unk> and <pad>.
  explicit Vocab(std::vector<std::string> tokens);

  // Specials first, then the sorted unique corpus words.
  static Vocab from_words(const std::vector<std::string>& words);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;  // <unk> for OOV
  bool contains(const std::string& token) const { return index_.contains(token); }
  const std::string& token(int id) const { return tokens_.at(std::size_t(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int pad_id() const { return pad_; }
  int unk_id() const { return unk_; }
  int start_id() const { return start_; }
  int tr_mark_id() const { return tr_mark_; }
  bool is_mark(int id) const { return id == start_ || id == tr_mark_; }

  std::uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int pad_ = -1;
  int unk_ = -1;
  int start_ = -1;
  int tr_mark_ = -1;
};

// Whitespace word-level tokenizer with an unknown-token fallback.
TokenSeq tokenize(const std::string& text, const Vocab& vocab);
std::string detokenize(std::span<const int> ids, const Vocab& vocab);

struct LmConfig {
  int embed_dim = 128;
  int layers = 2;
  int heads = 4;
  int max_context = 256;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static LmConfig from_json(const nlohmann::json& j);
};

class DecoderLM {
 public:
  DecoderLM(Vocab vocab, LmConfig config);

  // Logits [(k + L) x V] for prompt [k x d] followed by tokens. Row k+j-1
  // predicts token j (1-based).
  ag::Var forward(const PromptSeq& prompt, std::span<const int> tokens) const;

  void set_trainable(bool flag) { params_.set_trainable(flag); }
  bool trainable() const { return params_.trainable(); }

  const Vocab& vocab() const { return vocab_; }
  const LmConfig& config() const { return config_; }
  int embed_dim() const { return config_.embed_dim; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  // Deep copy with independent parameter storage.
  DecoderLM clone() const;

  void save(const std::filesystem::path& dir) const;
  static DecoderLM load(const std::filesystem::path& dir);
  static nlohmann::json describe(const DecoderLM& lm);

  // Output layer, exposed so tests can build degenerate models.
  nn::Linear& output_layer() { return output_; }

 private:
  Vocab vocab_;
  LmConfig config_;
  nn::ParameterSet params_;
  ag::Var token_embedding_;
  ag::Var position_embedding_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm final_norm_;
  nn::Linear output_;
};

// Free-function spellings of the model surface.
ag::Var lm_forward(const DecoderLM& lm, const PromptSeq& prompt, std::span<const int> tokens);
DecoderLM& set_trainable(DecoderLM& lm, bool flag);

// Row-wise softmax of a logits matrix.
ag::Matrix softmax_rows(const ag::Matrix& logits);

}  // namespace bpgpt::lm
