#pragma once

// Two-stage training: stage 1 fits the text-to-text baseline (mapping
// network, optionally the LM); stage 2 fits the fMRI encoder with the
// brain decoding loss plus contrastive alignment to the frozen stage-1
// text prompts. Also hosts LM pretraining for the toy backend.

#include "bpgpt/corpus.hpp"
#include "bpgpt/lm.hpp"
#include "bpgpt/objectives.hpp"
#include "bpgpt/prompting.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace bpgpt::train {

enum class Stage { baseline, decoder };
enum class Strategy { word_rate, special_token };

const char* to_string(Stage s);
const char* to_string(Strategy s);
Strategy parse_strategy(const std::string& s);

struct TrainConfig {
  Stage stage = Stage::baseline;
  bool fine_tune_lm = false;
  Strategy strategy = Strategy::special_token;
  double alpha = 1.0;
  double tau = 0.1;
  objectives::ContrastiveForm contrastive_form = objectives::ContrastiveForm::literal;
  objectives::SimilarityPooling pooling = objectives::SimilarityPooling::flatten;
  prompting::TextInput text_input = prompting::TextInput::sequence;
  int batch_size = 32;
  double lr = 1e-4;
  double weight_decay = 0.01;
  double warmup_fraction = 0.05;
  double grad_clip = 1.0;
  int epochs = 10;
  int patience = 0;  // early stopping on validation loss; 0 disables
  std::uint64_t seed = 0;

  void validate() const;
  objectives::ContrastiveOptions contrastive() const { return {tau, contrastive_form, pooling}; }
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Decoding target for a window: annotated under the special-token
// strategy, plain words under the word-rate strategy.
std::string target_text(const corpus::Window& window, Strategy strategy);

struct StepRecord {
  long step = 0;
  int epoch = 0;
  objectives::LossReport report;
  double lr = 0.0;
};

// Append-only JSON-lines training log; keeps records in memory as well.
class TrainingLog {
 public:
  TrainingLog() = default;
  explicit TrainingLog(std::ostream* sink) : sink_(sink) {}
  void record(const StepRecord& r);
  void warn(const std::string& message);
  const std::vector<StepRecord>& records() const { return records_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  static nlohmann::json to_json(const StepRecord& r);

 private:
  std::ostream* sink_ = nullptr;
  std::vector<StepRecord> records_;
  std::vector<std::string> warnings_;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> validation_loss;
};

struct Checkpoint {
  TrainConfig config;
  lm::DecoderLM lm;
  prompting::TextEncoderConfig text_encoder;
  prompting::PromptMapper mapper;                  // text side (stage 1)
  std::optional<prompting::PromptMapper> encoder;  // fMRI side (stage 2)
  std::string rng_state;
  std::vector<EpochStats> history;

  void save(const std::filesystem::path& dir) const;
  static Checkpoint load(const std::filesystem::path& dir);
};

Checkpoint train_baseline(const TrainConfig& config, std::span<const corpus::Window> corpus,
                          const lm::DecoderLM& lm, const prompting::TextEncoderConfig& text_encoder,
                          const prompting::MapperConfig& mapper, TrainingLog* log = nullptr,
                          std::span<const corpus::Window> validation = {});

// Starts from the baseline's LM. The baseline mapper is frozen and supplies
// the contrastive targets.
Checkpoint train_decoder(const TrainConfig& config, std::span<const corpus::Window> corpus,
                         const Checkpoint& baseline, const prompting::MapperConfig& encoder,
                         TrainingLog* log = nullptr, std::span<const corpus::Window> validation = {});

// Text prompts of the (frozen) baseline mapper for the given windows.
std::vector<PromptSeq> text_prompts(const Checkpoint& baseline, std::span<const corpus::Window> windows,
                                    Strategy strategy);

struct PretrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
};

// Next-token pretraining of the toy LM on plain text, conditioned on a
// single all-zero prompt vector. Stands in for a pretrained backend.
void pretrain_lm(lm::DecoderLM& lm, std::span<const std::string> texts, const PretrainConfig& config,
                 TrainingLog* log = nullptr);

}  // namespace bpgpt::train
