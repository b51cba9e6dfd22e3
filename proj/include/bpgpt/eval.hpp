#pragma once

// Window-level text similarity metrics and story-level averaging.

#include "bpgpt/autograd.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace bpgpt::prompting {
class TextEncoder;
}

namespace bpgpt::eval {

using Words = std::vector<std::string>;

// Lowercased whitespace words.
Words metric_tokens(const std::string& text);

// Clipped unigram precision times the brevity penalty.
double bleu1(const Words& candidate, const Words& reference);

struct MeteorParams {
  double alpha = 0.9;  // precision weight in the harmonic mean
  double beta = 3.0;   // fragmentation exponent
  double gamma = 0.5;  // maximum fragmentation penalty
};

// Exact-match METEOR:
//   Fmean = P*R / (alpha*P + (1-alpha)*R),  Pen = gamma*(chunks/matches)^beta,
//   score = Fmean * (1 - Pen).
double meteor(const Words& candidate, const Words& reference, const MeteorParams& params = {});

// Number of contiguous aligned runs in the exact-match alignment used by
// meteor(); exposed for tests. Returns {matches, chunks}.
std::pair<int, int> meteor_alignment(const Words& candidate, const Words& reference);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  // One row per word, [n x dim].
  virtual ag::Matrix embed(const Words& words) const = 0;
  virtual int dim() const = 0;
};

// Deterministic pseudo-random vector per word (non-contextual).
class HashEmbedding : public EmbeddingProvider {
 public:
  explicit HashEmbedding(int dim = 64, std::uint64_t seed = 17) : dim_(dim), seed_(seed) {}
  ag::Matrix embed(const Words& words) const override;
  int dim() const override { return dim_; }

 private:
  int dim_;
  std::uint64_t seed_;
};

// One-hot vectors over a fixed word list; distinct words are orthogonal.
class OrthogonalEmbedding : public EmbeddingProvider {
 public:
  explicit OrthogonalEmbedding(const Words& lexicon);
  ag::Matrix embed(const Words& words) const override;
  int dim() const override { return static_cast<int>(index_.size()); }

 private:
  std::unordered_map<std::string, int> index_;
};

// Contextual states from the frozen text encoder ([CLS] row dropped).
class ContextualEmbedding : public EmbeddingProvider {
 public:
  explicit ContextualEmbedding(std::shared_ptr<const prompting::TextEncoder> encoder);
  ag::Matrix embed(const Words& words) const override;
  int dim() const override;

 private:
  std::shared_ptr<const prompting::TextEncoder> encoder_;
};

// Greedy cosine matching F1, no baseline rescaling.
double bertscore(const Words& candidate, const Words& reference, const EmbeddingProvider& emb);

struct WindowScores {
  double bleu1 = 0.0;
  double meteor = 0.0;
  double bertscore = 0.0;
};

struct MetricReport {
  double bleu1 = 0.0;
  double meteor = 0.0;
  double bertscore = 0.0;
  std::vector<WindowScores> per_window;
};

MetricReport evaluate_story(const std::vector<Words>& candidates, const std::vector<Words>& references,
                            const EmbeddingProvider& emb, const MeteorParams& params = {});

// Per-window TSV table followed by a `mean` summary row.
void write_metric_report(const std::filesystem::path& path, const MetricReport& report,
                         const std::vector<std::string>& window_ids);
std::string format_metric_report(const MetricReport& report, const std::vector<std::string>& window_ids);

}  // namespace bpgpt::eval
