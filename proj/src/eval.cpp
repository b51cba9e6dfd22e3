#include "bpgpt/eval.hpp"

#include "bpgpt/error.hpp"
#include "bpgpt/prompting.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace bpgpt::eval {

Words metric_tokens(const std::string& text) {
  Words out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) {
    for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(std::move(w));
  }
  return out;
}

double bleu1(const Words& candidate, const Words& reference) {
  if (reference.empty()) throw ValidationError("bleu1: empty reference");
  if (candidate.empty()) return 0.0;
  std::unordered_map<std::string, int> ref_counts;
  for (const auto& w : reference) ++ref_counts[w];
  std::unordered_map<std::string, int> used;
  int clipped = 0;
  for (const auto& w : candidate) {
    auto it = ref_counts.find(w);
    if (it != ref_counts.end() && used[w] < it->second) {
      ++used[w];
      ++clipped;
    }
  }
  const double c = double(candidate.size());
  const double r = double(reference.size());
  const double precision = clipped / c;
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return precision * bp;
}

std::pair<int, int> meteor_alignment(const Words& candidate, const Words& reference) {
  std::vector<int> ref_of(candidate.size(), -1);
  std::vector<bool> ref_used(reference.size(), false);
  auto run_length = [&](std::size_t i, std::size_t j) {
    std::size_t n = 0;
    while (i + n < candidate.size() && j + n < reference.size() && !ref_used[j + n] &&
           candidate[i + n] == reference[j + n]) {
      ++n;
    }
    return n;
  };
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    int chosen = -1;
    if (i > 0 && ref_of[i - 1] >= 0) {
      std::size_t j = std::size_t(ref_of[i - 1]) + 1;
      if (j < reference.size() && !ref_used[j] && reference[j] == candidate[i]) chosen = int(j);
    }
    if (chosen < 0) {
      std::size_t best = 0;
      for (std::size_t j = 0; j < reference.size(); ++j) {
        if (ref_used[j] || reference[j] != candidate[i]) continue;
        std::size_t len = run_length(i, j);
        if (len > best) {
          best = len;
          chosen = int(j);
        }
      }
    }
    if (chosen >= 0) {
      ref_of[i] = chosen;
      ref_used[std::size_t(chosen)] = true;
    }
  }
  int matches = 0;
  int chunks = 0;
  int prev_i = -2;
  int prev_j = -2;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    if (ref_of[i] < 0) continue;
    ++matches;
    if (!(int(i) == prev_i + 1 && ref_of[i] == prev_j + 1)) ++chunks;
    prev_i = int(i);
    prev_j = ref_of[i];
  }
  return {matches, chunks};
}

double meteor(const Words& candidate, const Words& reference, const MeteorParams& params) {
  if (reference.empty()) throw ValidationError("meteor: empty reference");
  if (candidate.empty()) return 0.0;
  auto [matches, chunks] = meteor_alignment(candidate, reference);
  if (matches == 0) return 0.0;
  const double p = double(matches) / double(candidate.size());
  const double r = double(matches) / double(reference.size());
  const double fmean = p * r / (params.alpha * p + (1.0 - params.alpha) * r);
  const double penalty = params.gamma * std::pow(double(chunks) / double(matches), params.beta);
  return fmean * (1.0 - penalty);
}

ag::Matrix HashEmbedding::embed(const Words& words) const {
  ag::Matrix out(static_cast<Eigen::Index>(words.size()), dim_);
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::uint64_t h = 1469598103934665603ULL ^ seed_;
    for (unsigned char c : words[i]) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    std::mt19937_64 rng(h);
    std::normal_distribution<double> d(0.0, 1.0);
    for (int k = 0; k < dim_; ++k) out(Eigen::Index(i), k) = d(rng);
  }
  return out;
}

OrthogonalEmbedding::OrthogonalEmbedding(const Words& lexicon) {
  for (const auto& w : lexicon) index_.emplace(w, int(index_.size()));
}

ag::Matrix OrthogonalEmbedding::embed(const Words& words) const {
  ag::Matrix out = ag::Matrix::Zero(static_cast<Eigen::Index>(words.size()), dim());
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto it = index_.find(words[i]);
    if (it == index_.end()) throw ShapeError("orthogonal embedding: unknown word '" + words[i] + "'");
    out(Eigen::Index(i), it->second) = 1.0;
  }
  return out;
}

ContextualEmbedding::ContextualEmbedding(std::shared_ptr<const prompting::TextEncoder> encoder)
    : encoder_(std::move(encoder)) {}

ag::Matrix ContextualEmbedding::embed(const Words& words) const {
  auto states = encoder_->encode(words).states;
  return states.bottomRows(states.rows() - 1);
}

int ContextualEmbedding::dim() const { return encoder_->dim(); }

double bertscore(const Words& candidate, const Words& reference, const EmbeddingProvider& emb) {
  if (candidate.empty() || reference.empty()) throw ValidationError("bertscore: empty input");
  auto normalize = [](ag::Matrix m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      double n = m.row(r).norm();
      if (n > 0.0) m.row(r) /= n;
    }
    return m;
  };
  ag::Matrix c = normalize(emb.embed(candidate));
  ag::Matrix r = normalize(emb.embed(reference));
  ag::Matrix sim = c * r.transpose();
  const double precision = sim.rowwise().maxCoeff().mean();
  const double recall = sim.colwise().maxCoeff().mean();
  if (precision + recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

MetricReport evaluate_story(const std::vector<Words>& candidates, const std::vector<Words>& references,
                            const EmbeddingProvider& emb, const MeteorParams& params) {
  if (candidates.size() != references.size()) {
    throw ValidationError("evaluate_story: " + std::to_string(candidates.size()) +
                          " candidates vs " + std::to_string(references.size()) + " references");
  }
  if (candidates.empty()) throw ValidationError("evaluate_story: no windows");
  MetricReport report;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    WindowScores s;
    if (!candidates[i].empty()) {
      s.bleu1 = bleu1(candidates[i], references[i]);
      s.meteor = meteor(candidates[i], references[i], params);
      s.bertscore = bertscore(candidates[i], references[i], emb);
    }
    report.per_window.push_back(s);
    report.bleu1 += s.bleu1;
    report.meteor += s.meteor;
    report.bertscore += s.bertscore;
  }
  const double n = double(candidates.size());
  report.bleu1 /= n;
  report.meteor /= n;
  report.bertscore /= n;
  return report;
}

std::string format_metric_report(const MetricReport& report,
                                 const std::vector<std::string>& window_ids) {
  std::string out = "window\tbleu1\tmeteor\tbertscore\n";
  char buf[128];
  for (std::size_t i = 0; i < report.per_window.size(); ++i) {
    const auto& s = report.per_window[i];
    std::snprintf(buf, sizeof(buf), "\t%.6f\t%.6f\t%.6f\n", s.bleu1, s.meteor, s.bertscore);
    out += (i < window_ids.size() ? window_ids[i] : std::to_string(i)) + buf;
  }
  std::snprintf(buf, sizeof(buf), "mean\t%.6f\t%.6f\t%.6f\n", report.bleu1, report.meteor,
                report.bertscore);
  out += buf;
  return out;
}

void write_metric_report(const std::filesystem::path& path, const MetricReport& report,
                         const std::vector<std::string>& window_ids) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write metric report " + path.string());
  out << format_metric_report(report, window_ids);
}

}  // namespace bpgpt::eval
