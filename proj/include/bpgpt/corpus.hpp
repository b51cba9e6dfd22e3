#pragma once

// Transcript and fMRI ingestion, TR alignment, windowing and special-token
// annotation.

#include "bpgpt/autograd.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace bpgpt::corpus {

using ag::Matrix;

struct WordEvent {
  std::string word;
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds, >= onset
};

struct StimulusTranscript {
  std::string story_id;
  std::vector<WordEvent> events;  // sorted by onset
  std::set<std::string> annotations;
};

struct FmriRun {
  std::string story_id;
  std::string subject_id;
  double tr_seconds = 2.0;
  Matrix frames;  // [n_tr x n_voxels], z-scored per voxel
  std::string roi = "all";
  std::optional<std::vector<bool>> roi_mask;

  Eigen::Index n_tr() const { return frames.rows(); }
  // Frames restricted to the ROI, or all voxels when no mask is set.
  Matrix roi_frames() const;
  void validate() const;
};

struct Window {
  std::string story_id;
  std::string subject_id;
  double start = 0.0;
  double duration = 20.0;
  double tr_seconds = 2.0;
  long first_tr = 0;  // global TR index of the first covered TR
  Matrix frames;      // [n_tr_window x n_voxels_roi]
  std::vector<std::string> words;
  std::vector<double> onsets;  // parallel to words
  std::vector<int> words_per_tr;

  int n_tr() const { return static_cast<int>(words_per_tr.size()); }
};

// Non-speech labels present in the source transcripts.
const std::set<std::string>& default_annotations();

// Reads `word<TAB>onset<TAB>offset` records after a header line. Words are
// lowercased and stripped of punctuation; tokens that are pure punctuation
// are dropped.
StimulusTranscript load_transcript(const std::filesystem::path& path, bool drop_annotations = true,
                                   const std::set<std::string>& annotations = default_annotations());
void save_transcript(const std::filesystem::path& path, const StimulusTranscript& transcript);

// Reads a sidecar manifest (JSON) and the raw float64 matrix it names.
FmriRun load_fmri_run(const std::filesystem::path& manifest_path);
// Writes `<stem>.json` and `<stem>.f64` into dir; returns the manifest path.
std::filesystem::path save_fmri_run(const std::filesystem::path& dir, const std::string& stem,
                                    const FmriRun& run);

struct WindowOptions {
  double window_seconds = 20.0;
  // Frames are taken this many TRs after the audio window (hemodynamic lag).
  int tr_offset = 0;
};

std::vector<Window> window_run(const FmriRun& run, const StimulusTranscript& transcript,
                               const WindowOptions& options = {});

std::vector<int> words_per_tr(const Window& window);

// "= w w $ w $ ..." with one '$' closing each TR.
std::string annotate_special_tokens(const Window& window);
std::string annotate_special_tokens(const std::vector<std::string>& words,
                                    const std::vector<int>& words_per_tr);
// Drops '=' and '$' marks and returns the remaining whitespace-separated words.
std::vector<std::string> strip_special_tokens(const std::string& text);

std::vector<std::string> split_words(const std::string& text);
std::string join_words(const std::vector<std::string>& words);

inline constexpr const char* kStartMark = "=";
inline constexpr const char* kTrMark = "$";

void write_window_manifest(const std::filesystem::path& path, const std::vector<Window>& windows);

struct WindowRecord {
  std::string story_id;
  std::string subject_id;
  double start = 0.0;
  int n_tr = 0;
  std::vector<int> words_per_tr;
  std::string text;
  std::string annotated;
};
std::vector<WindowRecord> read_window_manifest(const std::filesystem::path& path);

}  // namespace bpgpt::corpus
