#pragma once

// End-to-end experiment plumbing shared by the command-line tool and the
// acceptance suite: data split, LM backend, both training stages,
// inference, evaluation and the shuffled-pairing control.

#include "bpgpt/corpus.hpp"
#include "bpgpt/eval.hpp"
#include "bpgpt/infer.hpp"
#include "bpgpt/lm.hpp"
#include "bpgpt/prompting.hpp"
#include "bpgpt/synth.hpp"
#include "bpgpt/train.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace bpgpt::pipeline {

enum class Backend { toy, pretrained };

// Flat experiment configuration; every field has a JSON key of the same
// name (see README for the schema).
struct ExperimentConfig {
  std::uint64_t seed = 0;
  train::Strategy strategy = train::Strategy::special_token;
  bool fine_tune_lm = false;
  double alpha = 1.0;
  double tau = 0.1;
  int prompt_length = 30;
  Backend backend = Backend::toy;
  std::string lm_checkpoint;  // required by the pretrained backend

  double window_seconds = 20.0;
  int tr_offset = 0;
  int test_stories = 2;
  int validation_stories = 0;

  int lm_embed_dim = 128;
  int lm_layers = 2;
  int lm_heads = 4;
  int lm_max_context = 256;
  int pretrain_epochs = 30;
  double pretrain_lr = 1e-3;

  int text_encoder_dim = 64;
  int mapper_width = 512;
  int mapper_layers = 8;
  int mapper_heads = 8;

  std::string contrastive_form = "literal";
  std::string pooling = "flatten";
  std::string text_input = "sequence";
  int batch_size = 32;
  double lr = 1e-4;
  double weight_decay = 0.01;
  double warmup_fraction = 0.05;
  double grad_clip = 1.0;
  int baseline_epochs = 10;
  int decoder_epochs = 10;
  int patience = 0;

  double ridge = 1.0;
  double temperature = 0.0;
  int top_k = 0;

  void validate() const;
  nlohmann::json to_json() const;
  // Unknown keys are rejected so typos surface as configuration errors.
  static ExperimentConfig from_json(const nlohmann::json& j);

  train::TrainConfig baseline_config() const;
  train::TrainConfig decoder_config() const;
  lm::LmConfig lm_config() const;
  prompting::TextEncoderConfig text_encoder_config() const;
  prompting::MapperConfig mapper_config(int input_dim) const;
  // Stable hash of to_json().
  std::string hash() const;
};

Backend parse_backend(const std::string& s);
const char* to_string(Backend b);

struct Split {
  std::vector<corpus::Window> train;
  std::vector<corpus::Window> validation;
  std::vector<corpus::Window> test;
};

std::vector<corpus::Window> make_windows(const std::vector<corpus::StimulusTranscript>& transcripts,
                                         const std::vector<corpus::FmriRun>& runs,
                                         const corpus::WindowOptions& options);

// Stories (in first-seen order) are assigned whole: the last
// `test_stories` go to test, the ones before to validation.
Split split_by_story(const std::vector<corpus::Window>& windows, int test_stories,
                     int validation_stories);

lm::Vocab vocab_for(const std::vector<corpus::Window>& windows);

// Plain and annotated target texts of the given windows.
std::vector<std::string> lm_corpus(const std::vector<corpus::Window>& windows);

// toy: fresh toy LM, pretrained on the training texts for pretrain_epochs.
// pretrained: loads the LM saved at lm_checkpoint; its vocabulary must
// cover the corpus.
lm::DecoderLM build_lm(const ExperimentConfig& config, const Split& split,
                       train::TrainingLog* log = nullptr);

double mean_words_per_tr(const std::vector<corpus::Window>& windows);

enum class PromptSource { text, brain };

struct InferenceRun {
  std::vector<infer::InferenceRecord> records;
  std::vector<eval::Words> candidates;
  std::vector<eval::Words> references;
  std::vector<std::string> window_ids;
};

std::string window_id(const corpus::Window& w);

// Generates one text per window. Text prompts come from the baseline
// mapper (the text-to-text setting, where the word budget is the true
// word count); brain prompts from the decoder checkpoint's encoder.
InferenceRun run_inference(const ExperimentConfig& config, const train::Checkpoint& checkpoint,
                           PromptSource source, const std::vector<corpus::Window>& windows,
                           const infer::WordRateModel* word_rate, double mean_words_per_tr);

struct Evaluation {
  eval::MetricReport report;
  eval::MetricReport shuffled;  // candidates scored against mismatched references
};

// Embeddings for BERTScore: contextual states of the checkpoint's frozen
// text encoder.
std::unique_ptr<eval::EmbeddingProvider> embedding_for(const train::Checkpoint& checkpoint);

Evaluation evaluate(const InferenceRun& run, const eval::EmbeddingProvider& emb);

// Derangement used by the shuffled-pairing control: pairs window i with
// window (i + n/2) mod n.
std::vector<std::size_t> shuffled_pairing(std::size_t n);

// Mean cosine between flattened brain and text prompts over the windows.
double prompt_alignment(const train::Checkpoint& decoder, const train::Checkpoint& baseline,
                        const std::vector<corpus::Window>& windows);

struct ExperimentResult {
  train::Checkpoint baseline;
  train::Checkpoint decoder;
  infer::WordRateModel word_rate;
  InferenceRun inference;
  Evaluation evaluation;
  double alignment = 0.0;
};

// Full two-stage run on a split. A baseline trained under an identical
// stage-1 configuration may be passed in to skip stage 1.
ExperimentResult run_experiment(const ExperimentConfig& config, const Split& split,
                                const lm::DecoderLM& lm, const train::Checkpoint* baseline = nullptr,
                                train::TrainingLog* log = nullptr);

struct TextToTextResult {
  train::Checkpoint baseline;
  InferenceRun inference;
  Evaluation evaluation;
};

// Stage 1 only: the baseline reconstructs each window from its own text
// prompt. Scored on `windows` (the test split unless given).
TextToTextResult run_text_to_text(const ExperimentConfig& config, const Split& split,
                                  const lm::DecoderLM& lm, train::TrainingLog* log = nullptr,
                                  const std::vector<corpus::Window>* windows = nullptr);

}  // namespace bpgpt::pipeline
