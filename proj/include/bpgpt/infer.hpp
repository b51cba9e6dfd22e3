#pragma once

// Autograd-free generation from a prompt with the two stop strategies,
// and the ridge word-rate model that supplies the word budget.

#include "bpgpt/corpus.hpp"
#include "bpgpt/lm.hpp"
#include "bpgpt/prompt_seq.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace bpgpt::infer {

using ag::Matrix;

struct WordRateModel {
  Eigen::VectorXd weights;  // one per voxel
  double intercept = 0.0;
  double reg = 0.0;

  Eigen::Index n_features() const { return weights.size(); }
  nlohmann::json to_json() const;
  static WordRateModel from_json(const nlohmann::json& j);
};

// Ridge regression with an unpenalised intercept from per-TR voxel vectors
// to per-TR word counts.
WordRateModel fit_word_rate_model(std::span<const corpus::Window> windows, double reg);
WordRateModel fit_word_rate_model(const Matrix& features, const Eigen::VectorXd& targets, double reg);

// Raw per-TR predictions, before clamping and rounding.
Eigen::VectorXd predict_rates(const WordRateModel& model, const Matrix& frames);
// Sum over TRs of max(0, round(prediction)).
int predict_word_count(const WordRateModel& model, const Matrix& frames);
double r_squared(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual);

enum class StopReason { word_budget, dollar_count, length_cap };
const char* to_string(StopReason r);

struct GenerationResult {
  lm::TokenSeq tokens;       // generated ids, excluding any seed token
  std::string surface_text;  // marks stripped
  StopReason stop_reason = StopReason::length_cap;
};

struct DecodeOptions {
  double temperature = 0.0;  // 0 = greedy
  int top_k = 0;             // 0 = full vocabulary
  std::uint64_t seed = 0;
};

// Stops once the surface word count reaches word_budget, or after cap
// generated tokens.
GenerationResult generate_word_rate(const lm::DecoderLM& lm, const PromptSeq& prompt,
                                    int word_budget, int cap, const DecodeOptions& options = {});

// Seeds with '=' and stops right after the n_tr-th '$', or after cap
// generated tokens.
GenerationResult generate_special_token(const lm::DecoderLM& lm, const PromptSeq& prompt, int n_tr,
                                        int cap, const DecodeOptions& options = {});

// 4x the expected generated length. The special-token cap counts marks too.
int word_rate_cap(int word_budget);
int special_token_cap(int n_tr, double mean_words_per_tr);

struct InferenceRecord {
  std::string window_id;
  std::string strategy;
  StopReason stop_reason = StopReason::length_cap;
  int predicted_words = 0;
  int actual_words = 0;
  std::string generated;
  std::string reference;
};

void write_inference_report(const std::filesystem::path& path, const std::vector<InferenceRecord>& records);
std::vector<InferenceRecord> read_inference_report(const std::filesystem::path& path);

}  // namespace bpgpt::infer
