#include "bpgpt/synth.hpp"

#include "bpgpt/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace bpgpt::synth {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

double gamma_pdf(double t, double shape, double scale) {
  if (t <= 0.0) return 0.0;
  return std::exp((shape - 1.0) * std::log(t) - t / scale - std::lgamma(shape) -
                  shape * std::log(scale));
}

// Glover-style double gamma: peak at 5 s, undershoot at 15 s, ratio 1/6.
double double_gamma(double t) { return gamma_pdf(t, 6.0, 1.0) - gamma_pdf(t, 16.0, 1.0) / 6.0; }

std::vector<std::string> make_lexicon(int size, std::mt19937_64& rng) {
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  std::uniform_int_distribution<std::size_t> pick_c(0, consonants.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_v(0, vowels.size() - 1);
  std::set<std::string> seen;
  std::vector<std::string> words;
  while (int(words.size()) < size) {
    std::string w;
    int syllables = 2 + int(words.size() % 2);
    for (int s = 0; s < syllables; ++s) {
      w += consonants[pick_c(rng)];
      w += vowels[pick_v(rng)];
    }
    if (seen.insert(w).second) words.push_back(w);
  }
  return words;
}

}  // namespace

void SynthConfig::validate() const {
  if (vocab_size < 1 || n_stories < 1 || story_seconds <= 0.0 || tr_seconds <= 0.0 ||
      n_voxels < 1 || words_per_second <= 0.0 || words_per_second_sd < 0.0 || successors < 1 ||
      hrf_seconds <= 0.0 || noise_sigma < 0.0) {
    throw ConfigError("synthetic config: every size and rate must be positive");
  }
}

json SynthConfig::to_json() const {
  return {{"seed", seed},
          {"vocab_size", vocab_size},
          {"n_stories", n_stories},
          {"story_seconds", story_seconds},
          {"tr_seconds", tr_seconds},
          {"n_voxels", n_voxels},
          {"words_per_second", words_per_second},
          {"words_per_second_sd", words_per_second_sd},
          {"successors", successors},
          {"rate_component", rate_component},
          {"hrf_seconds", hrf_seconds},
          {"noise_sigma", noise_sigma},
          {"regular_timing", regular_timing},
          {"subject_id", subject_id}};
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  c.seed = j.value("seed", c.seed);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.n_stories = j.value("n_stories", c.n_stories);
  c.story_seconds = j.value("story_seconds", c.story_seconds);
  c.tr_seconds = j.value("tr_seconds", c.tr_seconds);
  c.n_voxels = j.value("n_voxels", c.n_voxels);
  c.words_per_second = j.value("words_per_second", c.words_per_second);
  c.words_per_second_sd = j.value("words_per_second_sd", c.words_per_second_sd);
  c.successors = j.value("successors", c.successors);
  c.rate_component = j.value("rate_component", c.rate_component);
  c.hrf_seconds = j.value("hrf_seconds", c.hrf_seconds);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.regular_timing = j.value("regular_timing", c.regular_timing);
  c.subject_id = j.value("subject_id", c.subject_id);
  return c;
}

std::vector<double> hrf_kernel(double tr_seconds, double length_s) {
  if (tr_seconds <= 0.0 || length_s <= 0.0) throw ConfigError("hrf_kernel: arguments must be > 0");
  const auto n = static_cast<std::size_t>(std::ceil(length_s / tr_seconds - 1e-9));
  std::vector<double> k(std::max<std::size_t>(n, 1));
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = double_gamma(double(i) * tr_seconds);
  double peak = *std::max_element(k.begin(), k.end());
  if (peak <= 0.0) throw ConfigError("hrf_kernel: window too short to contain the response");
  for (double& v : k) v /= peak;
  return k;
}

std::vector<double> convolve(const std::vector<double>& signal, const std::vector<double>& kernel) {
  std::vector<double> out(signal.size(), 0.0);
  for (std::size_t n = 0; n < signal.size(); ++n) {
    for (std::size_t m = 0; m < kernel.size() && m <= n; ++m) out[n] += kernel[m] * signal[n - m];
  }
  return out;
}

SyntheticDataset make_synthetic_dataset(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::mt19937_64 noise_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  SyntheticDataset data;
  data.lexicon = make_lexicon(config.vocab_size, rng);
  const int V = config.vocab_size;

  // Bigram chain: each word has a few successors with random weights.
  std::vector<std::discrete_distribution<int>> next(static_cast<std::size_t>(V));
  std::vector<std::vector<int>> successors(static_cast<std::size_t>(V));
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  for (int w = 0; w < V; ++w) {
    std::vector<int> others;
    for (int o = 0; o < V; ++o) {
      if (o != w) others.push_back(o);
    }
    if (others.empty()) others.push_back(w);  // single-word lexicon repeats itself
    std::shuffle(others.begin(), others.end(), rng);
    const int deg = std::min<int>(config.successors, int(others.size()));
    successors[std::size_t(w)].assign(others.begin(), others.begin() + deg);
    std::vector<double> weights(static_cast<std::size_t>(deg));
    for (double& x : weights) x = unit(rng);
    next[std::size_t(w)] = std::discrete_distribution<int>(weights.begin(), weights.end());
  }

  // Voxel signatures: shared rate component plus a word-specific pattern.
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::RowVectorXd shared(config.n_voxels);
  for (auto& x : shared) x = gauss(rng);
  corpus::Matrix signatures(V, config.n_voxels);
  for (Eigen::Index i = 0; i < signatures.size(); ++i) signatures.data()[i] = gauss(rng);
  signatures.rowwise() += config.rate_component * shared;

  const auto kernel = hrf_kernel(config.tr_seconds, config.hrf_seconds);
  const double tr = config.tr_seconds;
  const long n_tr = std::max(1L, long(std::floor(config.story_seconds / tr + 1e-9)));

  for (int s = 0; s < config.n_stories; ++s) {
    char id[32];
    std::snprintf(id, sizeof(id), "story%02d", s);
    corpus::StimulusTranscript transcript;
    transcript.story_id = id;
    transcript.annotations = corpus::default_annotations();
    corpus::Matrix stimulus = corpus::Matrix::Zero(n_tr, config.n_voxels);

    int word = std::uniform_int_distribution<int>(0, V - 1)(rng);
    std::normal_distribution<double> rate_dist(config.words_per_second, config.words_per_second_sd);
    for (long t = 0; t < n_tr; ++t) {
      int count = 0;
      if (config.regular_timing) {
        count = int(std::lround(config.words_per_second * tr));
      } else {
        double rate = std::max(0.0, rate_dist(rng));
        count = std::poisson_distribution<int>(rate * tr)(rng);
      }
      std::vector<double> onsets(static_cast<std::size_t>(count));
      if (config.regular_timing) {
        for (int i = 0; i < count; ++i) onsets[std::size_t(i)] = (double(i) + 0.5) * tr / count;
      } else {
        std::uniform_real_distribution<double> within(0.0, tr);
        for (double& o : onsets) o = within(rng);
        std::sort(onsets.begin(), onsets.end());
      }
      for (double o : onsets) {
        corpus::WordEvent e;
        e.word = data.lexicon[std::size_t(word)];
        e.onset = double(t) * tr + o;
        e.offset = e.onset + 0.25;
        transcript.events.push_back(e);
        stimulus.row(t) += signatures.row(word);
        word = successors[std::size_t(word)][std::size_t(next[std::size_t(word)](rng))];
      }
    }
    for (std::size_t i = 0; i + 1 < transcript.events.size(); ++i) {
      auto& e = transcript.events[i];
      e.offset = std::min(e.offset, std::max(e.onset, transcript.events[i + 1].onset));
    }

    corpus::FmriRun run;
    run.story_id = id;
    run.subject_id = config.subject_id;
    run.tr_seconds = tr;
    run.roi = "synthetic";
    run.frames = corpus::Matrix::Zero(n_tr, config.n_voxels);
    for (long t = 0; t < n_tr; ++t) {
      for (std::size_t m = 0; m < kernel.size() && long(m) <= t; ++m) {
        run.frames.row(t) += kernel[m] * stimulus.row(t - long(m));
      }
    }
    if (config.noise_sigma > 0.0) {
      std::normal_distribution<double> noise(0.0, config.noise_sigma);
      for (Eigen::Index i = 0; i < run.frames.size(); ++i) run.frames.data()[i] += noise(noise_rng);
    }
    data.transcripts.push_back(std::move(transcript));
    data.runs.push_back(std::move(run));
  }
  return data;
}

void write_dataset(const fs::path& dir, const SyntheticDataset& data) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < data.runs.size(); ++i) {
    const auto& id = data.runs[i].story_id;
    corpus::save_transcript(dir / (id + ".tsv"), data.transcripts[i]);
    corpus::save_fmri_run(dir, id, data.runs[i]);
  }
}

SyntheticDataset read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  std::vector<std::string> stories;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".tsv" &&
        fs::exists(dir / (entry.path().stem().string() + ".json"))) {
      stories.push_back(entry.path().stem().string());
    }
  }
  std::sort(stories.begin(), stories.end());
  if (stories.empty()) throw DataError("no transcript/fMRI pairs in " + dir.string());
  SyntheticDataset data;
  std::set<std::string> lexicon;
  for (const auto& id : stories) {
    auto t = corpus::load_transcript(dir / (id + ".tsv"));
    t.story_id = id;
    for (const auto& e : t.events) lexicon.insert(e.word);
    data.transcripts.push_back(std::move(t));
    data.runs.push_back(corpus::load_fmri_run(dir / (id + ".json")));
  }
  data.lexicon.assign(lexicon.begin(), lexicon.end());
  return data;
}

}  // namespace bpgpt::synth
