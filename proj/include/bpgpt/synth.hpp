#pragma once

// Deterministic synthetic subject: bigram word stream, per-word voxel
// signatures, HRF-convolved BOLD frames.

#include "bpgpt/corpus.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bpgpt::synth {

struct SynthConfig {
  std::uint64_t seed = 1;
  int vocab_size = 24;
  int n_stories = 12;
  double story_seconds = 200.0;
  double tr_seconds = 2.0;
  int n_voxels = 32;
  double words_per_second = 1.0;
  double words_per_second_sd = 0.3;
  int successors = 3;           // out-degree of the bigram chain
  double rate_component = 1.0;  // weight of the signature shared by all words
  double hrf_seconds = 32.0;
  double noise_sigma = 0.0;
  // Evenly spaced words at exactly words_per_second, no rate jitter.
  bool regular_timing = false;
  std::string subject_id = "synth01";

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

struct SyntheticDataset {
  std::vector<corpus::StimulusTranscript> transcripts;
  std::vector<corpus::FmriRun> runs;
  std::vector<std::string> lexicon;
};

SyntheticDataset make_synthetic_dataset(const SynthConfig& config);

// Double-gamma HRF sampled every tr seconds over [0, length_s), scaled to a
// unit peak. First lobe peaks at 5 s; the undershoot peaks near 15 s.
std::vector<double> hrf_kernel(double tr_seconds, double length_s);

// Causal convolution truncated to the signal length.
std::vector<double> convolve(const std::vector<double>& signal, const std::vector<double>& kernel);

// Writes `<story>.tsv` transcripts and `<story>.json`/`.f64` fMRI runs.
void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& data);

// Loads every `<story>.tsv` that has a matching `<story>.json` run, in
// lexicographic story order.
SyntheticDataset read_dataset(const std::filesystem::path& dir);

}  // namespace bpgpt::synth
