#include "bpgpt/error.hpp"
#include "bpgpt/infer.hpp"
#include "bpgpt/synth.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <map>
#include <set>

using namespace bpgpt;
using namespace bpgpt::synth;
using bpgpt::testing::TempDir;

namespace {

double word_rate_r2(double noise) {
  SynthConfig c;
  c.n_stories = 6;
  c.noise_sigma = noise;
  auto data = make_synthetic_dataset(c);
  std::vector<corpus::Window> windows;
  for (std::size_t i = 0; i < data.runs.size(); ++i) {
    auto ws = corpus::window_run(data.runs[i], data.transcripts[i], {20.0, 2});
    windows.insert(windows.end(), ws.begin(), ws.end());
  }
  auto model = infer::fit_word_rate_model(windows, 1e-3);
  Eigen::VectorXd pred(0), actual(0);
  for (const auto& w : windows) {
    Eigen::VectorXd p = infer::predict_rates(model, w.frames);
    pred.conservativeResize(pred.size() + p.size());
    actual.conservativeResize(actual.size() + p.size());
    pred.tail(p.size()) = p;
    for (int t = 0; t < w.n_tr(); ++t) actual(actual.size() - p.size() + t) = w.words_per_tr[std::size_t(t)];
  }
  return infer::r_squared(pred, actual);
}

}  // namespace

TEST_CASE("hrf kernel shape") {
  for (double tr : {0.5, 1.0, 2.0}) {
    auto k = hrf_kernel(tr, 32.0);
    CHECK(std::abs(double(k.size()) - 32.0 / tr) <= 1.0);
    const auto peak = std::max_element(k.begin(), k.end());
    CHECK(*peak == 1.0);
    const double peak_time = double(peak - k.begin()) * tr;
    CHECK(std::abs(peak_time - 5.0) <= tr);
    int sign_changes = 0;
    bool negative = false;
    for (std::size_t i = 1; i < k.size(); ++i) {
      if (!negative && k[i] < 0.0) {
        negative = true;
        ++sign_changes;
      } else if (negative && k[i] > 1e-12) {
        ++sign_changes;
      }
    }
    CHECK(sign_changes == 1);
    CHECK(k[0] == 0.0);
  }
  CHECK_THROWS_AS(hrf_kernel(0.0, 32.0), ConfigError);
}

TEST_CASE("impulse convolution reproduces the kernel") {
  auto k = hrf_kernel(2.0, 32.0);
  std::vector<double> impulse(40, 0.0);
  impulse[0] = 1.0;
  auto out = convolve(impulse, k);
  for (std::size_t i = 0; i < k.size(); ++i) CHECK(out[i] == k[i]);
  for (std::size_t i = k.size(); i < out.size(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("constant input reaches an exact steady state") {
  SynthConfig c;
  c.vocab_size = 1;
  c.n_stories = 1;
  c.story_seconds = 100.0;
  c.regular_timing = true;
  auto data = make_synthetic_dataset(c);
  const auto& frames = data.runs[0].frames;
  const auto transient = Eigen::Index(hrf_kernel(c.tr_seconds, c.hrf_seconds).size());
  REQUIRE(frames.rows() > transient + 2);
  for (Eigen::Index t = transient; t < frames.rows(); ++t) CHECK(frames.row(t) == frames.row(transient));
  std::set<std::string> words;
  for (const auto& e : data.transcripts[0].events) words.insert(e.word);
  CHECK(words.size() == 1);
}

TEST_CASE("same seed gives identical datasets") {
  SynthConfig c;
  c.n_stories = 3;
  c.noise_sigma = 0.2;
  auto a = make_synthetic_dataset(c);
  auto b = make_synthetic_dataset(c);
  REQUIRE(a.runs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.runs[i].frames == b.runs[i].frames);
    REQUIRE(a.transcripts[i].events.size() == b.transcripts[i].events.size());
    for (std::size_t j = 0; j < a.transcripts[i].events.size(); ++j) {
      CHECK(a.transcripts[i].events[j].word == b.transcripts[i].events[j].word);
      CHECK(a.transcripts[i].events[j].onset == b.transcripts[i].events[j].onset);
    }
  }
  c.seed = 2;
  CHECK(make_synthetic_dataset(c).runs[0].frames != a.runs[0].frames);
}

TEST_CASE("word stream follows a sparse bigram chain") {
  SynthConfig c;
  c.n_stories = 4;
  auto data = make_synthetic_dataset(c);
  std::map<std::string, std::set<std::string>> seen;
  for (const auto& t : data.transcripts) {
    CHECK(std::is_sorted(t.events.begin(), t.events.end(),
                         [](const auto& x, const auto& y) { return x.onset < y.onset; }));
    for (std::size_t i = 0; i + 1 < t.events.size(); ++i) {
      seen[t.events[i].word].insert(t.events[i + 1].word);
    }
    for (const auto& e : t.events) CHECK(e.offset >= e.onset);
  }
  for (const auto& [word, next] : seen) CHECK(int(next.size()) <= c.successors);
  CHECK(data.lexicon.size() == std::size_t(c.vocab_size));
}

TEST_CASE("word-rate fit degrades with noise") {
  const double r0 = word_rate_r2(0.0);
  const double r1 = word_rate_r2(8.0);
  const double r2 = word_rate_r2(32.0);
  CHECK(r0 > r1);
  CHECK(r1 > r2);
}

TEST_CASE("dataset files round trip") {
  TempDir dir;
  SynthConfig c;
  c.n_stories = 2;
  auto data = make_synthetic_dataset(c);
  write_dataset(dir.path(), data);
  auto back = read_dataset(dir.path());
  REQUIRE(back.runs.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.runs[i].frames == data.runs[i].frames);
    CHECK(back.runs[i].story_id == data.runs[i].story_id);
    REQUIRE(back.transcripts[i].events.size() == data.transcripts[i].events.size());
    for (std::size_t j = 0; j < data.transcripts[i].events.size(); ++j) {
      CHECK(back.transcripts[i].events[j].onset == data.transcripts[i].events[j].onset);
    }
  }
  CHECK_THROWS_AS(read_dataset(dir / "missing"), DataError);
}

TEST_CASE("synth config validation and JSON") {
  SynthConfig c;
  c.n_voxels = 0;
  CHECK_THROWS_AS(make_synthetic_dataset(c), ConfigError);
  SynthConfig d;
  d.noise_sigma = 0.5;
  d.regular_timing = true;
  auto back = SynthConfig::from_json(d.to_json());
  CHECK(back.noise_sigma == 0.5);
  CHECK(back.regular_timing);
}
