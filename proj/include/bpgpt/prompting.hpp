#pragma once

// Prompt extractors: the text-side mapping network and the fMRI encoder
// share one query-slot transformer architecture.

#include "bpgpt/nn.hpp"
#include "bpgpt/prompt_seq.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace bpgpt::prompting {

using ag::Matrix;

// Last hidden state of the frozen bidirectional text encoder.
struct TextEncoderStates {
  Matrix states;           // [L_text x d_enc]
  std::vector<bool> mask;  // true = attend
};

struct TextEncoderConfig {
  int dim = 64;
  int layers = 1;
  int heads = 4;
  int max_length = 512;
  std::uint64_t seed = 7;

  nlohmann::json to_json() const;
  static TextEncoderConfig from_json(const nlohmann::json& j);
};

// Frozen stand-in for a pretrained bidirectional encoder. Word embeddings
// are derived from a hash of the word, so the encoder needs no vocabulary;
// a fixed [CLS] row is always prepended.
class TextEncoder {
 public:
  explicit TextEncoder(TextEncoderConfig config = {});

  TextEncoderStates encode(const std::vector<std::string>& words) const;

  const TextEncoderConfig& config() const { return config_; }
  const nn::ParameterSet& params() const { return params_; }
  int dim() const { return config_.dim; }

 private:
  ag::Matrix word_vector(const std::string& word) const;

  TextEncoderConfig config_;
  nn::ParameterSet params_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm final_norm_;
};

enum class TextInput { sequence, pooled };

struct MapperConfig {
  int input_dim = 64;
  int width = 512;
  int layers = 8;
  int heads = 8;
  int prompt_length = 30;
  int output_dim = 768;
  int max_input_length = 512;
  std::uint64_t seed = 0;

  // Architecture as published: 512-wide, 8 layers, 8 heads, k = 30.
  static MapperConfig full_scale(int input_dim, int output_dim);
  nlohmann::json to_json() const;
  static MapperConfig from_json(const nlohmann::json& j);
};

// input [L x d_in] -> input_proj -> prepend k query slots -> + positions ->
// bidirectional trunk -> query outputs -> output_proj -> [k x d].
class PromptMapper {
 public:
  explicit PromptMapper(MapperConfig config);

  PromptSeq map(const ag::Var& input) const;

  const MapperConfig& config() const { return config_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  void set_trainable(bool flag) { params_.set_trainable(flag); }
  nn::Linear& output_projection() { return output_proj_; }

  PromptMapper clone() const;
  void save(const std::filesystem::path& dir, const std::string& name) const;
  static PromptMapper load(const std::filesystem::path& dir, const std::string& name);

 private:
  MapperConfig config_;
  nn::ParameterSet params_;
  nn::Linear input_proj_;
  ag::Var queries_;
  ag::Var positions_;
  std::vector<nn::TransformerBlock> trunk_;
  nn::LayerNorm final_norm_;
  nn::Linear output_proj_;
};

// P^T = M(text states). Masked rows are removed before mapping.
PromptSeq map_text_to_prompt(const PromptMapper& mapper, const TextEncoderStates& states,
                             TextInput mode = TextInput::sequence);

// P^B = E(frames), one input token per TR.
PromptSeq encode_fmri_to_prompt(const PromptMapper& encoder, const Matrix& frames);

}  // namespace bpgpt::prompting
