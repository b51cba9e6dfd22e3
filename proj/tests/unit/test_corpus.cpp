#include "bpgpt/corpus.hpp"
#include "bpgpt/error.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace bpgpt;
using namespace bpgpt::corpus;
using bpgpt::testing::TempDir;
using bpgpt::testing::write_text;

namespace {

FmriRun make_run(long n_tr, Eigen::Index voxels = 3, double tr = 2.0) {
  FmriRun run;
  run.story_id = "s1";
  run.subject_id = "subj";
  run.tr_seconds = tr;
  run.frames = Matrix(n_tr, voxels);
  for (Eigen::Index i = 0; i < run.frames.size(); ++i) run.frames.data()[i] = double(i);
  return run;
}

StimulusTranscript transcript_from(const std::vector<std::pair<std::string, double>>& words) {
  StimulusTranscript t;
  t.story_id = "s1";
  for (const auto& [w, onset] : words) t.events.push_back({w, onset, onset + 0.2});
  return t;
}

Window window_with(std::vector<std::string> words, std::vector<double> onsets, int n_tr) {
  Window w;
  w.duration = 2.0 * n_tr;
  w.tr_seconds = 2.0;
  w.words = std::move(words);
  w.onsets = std::move(onsets);
  return w;
}

}  // namespace

TEST_CASE("load_transcript reads, sorts and filters") {
  TempDir dir;
  write_text(dir / "a.tsv", "word\tonset\toffset\nthe\t0.0\t0.3\nold\t0.3\t0.6\nman\t0.6\t0.9\n");
  auto t = load_transcript(dir / "a.tsv");
  REQUIRE(t.events.size() == 3);
  CHECK(t.events[0].word == "the");
  CHECK(t.events[2].word == "man");
  CHECK(t.story_id == "a");

  write_text(dir / "b.tsv",
             "word\tonset\toffset\nthe\t0.0\t0.3\nold\t0.3\t0.6\nman\t0.6\t0.9\ncough\t1.0\t1.2\n");
  CHECK(load_transcript(dir / "b.tsv", true).events.size() == 3);
  CHECK(load_transcript(dir / "b.tsv", false).events.size() == 4);

  write_text(dir / "c.tsv", "word\tonset\toffset\nman\t0.6\t0.9\nthe\t0.0\t0.3\nold\t0.3\t0.6\n");
  auto sorted = load_transcript(dir / "c.tsv");
  CHECK(sorted.events[0].word == "the");
  CHECK(sorted.events[1].word == "old");
  CHECK(sorted.events[2].word == "man");
}

TEST_CASE("load_transcript normalises words") {
  TempDir dir;
  write_text(dir / "a.tsv", "word\tonset\toffset\nThe,\t0.0\t0.3\n...\t0.3\t0.4\nOld!\t0.4\t0.6\n");
  auto t = load_transcript(dir / "a.tsv");
  REQUIRE(t.events.size() == 2);
  CHECK(t.events[0].word == "the");
  CHECK(t.events[1].word == "old");
}

TEST_CASE("load_transcript errors") {
  TempDir dir;
  write_text(dir / "bad.tsv", "word\tonset\toffset\nthe\t0.0\t0.3\nold\tzero\t0.6\n");
  try {
    load_transcript(dir / "bad.tsv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  write_text(dir / "inv.tsv", "word\tonset\toffset\nthe\t1.0\t0.3\n");
  CHECK_THROWS_AS(load_transcript(dir / "inv.tsv"), ValidationError);
  CHECK_THROWS_AS(load_transcript(dir / "missing.tsv"), DataError);
}

TEST_CASE("transcript round trip keeps exact onsets") {
  TempDir dir;
  StimulusTranscript t = transcript_from({{"a", 0.1}, {"b", 1.0 / 3.0}, {"c", 19.99}});
  save_transcript(dir / "s1.tsv", t);
  auto back = load_transcript(dir / "s1.tsv");
  REQUIRE(back.events.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.events[i].word == t.events[i].word);
    CHECK(back.events[i].onset == t.events[i].onset);
    CHECK(back.events[i].offset == t.events[i].offset);
  }
}

TEST_CASE("fMRI run round trip and ROI mask") {
  TempDir dir;
  FmriRun run = make_run(4, 3);
  run.roi_mask = std::vector<bool>{true, false, true};
  auto manifest = save_fmri_run(dir.path(), "s1", run);
  FmriRun back = load_fmri_run(manifest);
  CHECK(back.frames == run.frames);
  CHECK(back.tr_seconds == run.tr_seconds);
  CHECK(back.subject_id == "subj");
  REQUIRE(back.roi_mask);
  Matrix roi = back.roi_frames();
  CHECK(roi.cols() == 2);
  CHECK(roi.col(1) == run.frames.col(2));

  FmriRun bad = make_run(2, 2);
  bad.frames(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("window_run counts") {
  auto t = transcript_from({});
  CHECK(window_run(make_run(150), t).size() == 15);
  for (const auto& w : window_run(make_run(150), t)) CHECK(w.frames.rows() == 10);
  CHECK(window_run(make_run(152), t).size() == 15);
  CHECK_THROWS_AS(window_run(make_run(150), t, {15.0, 0}), ConfigError);
  CHECK(window_run(make_run(5), t).empty());
}

TEST_CASE("window_run assigns by onset, half open") {
  auto t = transcript_from({{"a", 0.0}, {"b", 19.99}, {"c", 20.0}, {"d", 39.0}});
  auto ws = window_run(make_run(20), t);
  REQUIRE(ws.size() == 2);
  CHECK(ws[0].words == std::vector<std::string>{"a", "b"});
  CHECK(ws[1].words == std::vector<std::string>{"c", "d"});
  CHECK(ws[0].words_per_tr[9] == 1);
  CHECK(ws[1].words_per_tr[0] == 1);
}

TEST_CASE("window_run applies the TR offset to frames only") {
  auto t = transcript_from({{"a", 1.0}});
  FmriRun run = make_run(12);
  auto ws = window_run(run, t, {20.0, 2});
  REQUIRE(ws.size() == 1);
  CHECK(ws[0].frames == run.frames.middleRows(2, 10));
  CHECK(ws[0].words_per_tr[0] == 1);
}

TEST_CASE("words_per_tr examples") {
  std::vector<std::string> words(12, "w");
  std::vector<double> onsets(12, 0.5);
  auto clustered = words_per_tr(window_with(words, onsets, 10));
  CHECK(clustered == std::vector<int>{12, 0, 0, 0, 0, 0, 0, 0, 0, 0});

  CHECK(words_per_tr(window_with({}, {}, 10)) == std::vector<int>(10, 0));

  std::vector<std::string> twenty(20, "w");
  std::vector<double> uniform;
  for (int i = 0; i < 20; ++i) uniform.push_back(double(i));
  CHECK(words_per_tr(window_with(twenty, uniform, 10)) == std::vector<int>(10, 2));
}

TEST_CASE("annotate_special_tokens examples") {
  CHECK(annotate_special_tokens({"a", "b", "c"}, {2, 1}) == "= a b $ c $");
  CHECK(annotate_special_tokens({}, {0, 0}) == "= $ $");
  CHECK(annotate_special_tokens({"x", "y", "z"}, {1, 0, 2}) == "= x $ $ y z $");
  CHECK_THROWS_AS(annotate_special_tokens({"x"}, {2}), ValidationError);
}

TEST_CASE("windowing invariants on random transcripts") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> onset(0.0, 330.0);
  std::uniform_int_distribution<int> pick(0, 5);
  const std::vector<std::string> lex = {"a", "b", "c", "d", "e", "f"};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::pair<std::string, double>> events;
    const int n = 50 + trial * 7;
    for (int i = 0; i < n; ++i) events.push_back({lex[std::size_t(pick(rng))], onset(rng)});
    std::sort(events.begin(), events.end(), [](auto& x, auto& y) { return x.second < y.second; });
    auto t = transcript_from(events);
    const long n_tr = 150 + trial % 7;
    auto ws = window_run(make_run(n_tr), t);
    CHECK(ws.size() == std::size_t(n_tr / 10));

    std::vector<std::string> concatenated;
    for (const auto& w : ws) {
      concatenated.insert(concatenated.end(), w.words.begin(), w.words.end());
      const int total = std::accumulate(w.words_per_tr.begin(), w.words_per_tr.end(), 0);
      CHECK(total == int(w.words.size()));
      CHECK(words_per_tr(w) == w.words_per_tr);
      for (double o : w.onsets) {
        CHECK(o >= w.start);
        CHECK(o < w.start + w.duration);
      }
      const std::string annotated = annotate_special_tokens(w);
      CHECK(std::count(annotated.begin(), annotated.end(), '$') == w.n_tr());
      CHECK(annotated.rfind("= ", 0) == 0);
      CHECK(std::count(annotated.begin(), annotated.end(), '=') == 1);
      CHECK(strip_special_tokens(annotated) == w.words);
    }
    std::vector<std::string> covered;
    const double end = double(ws.size()) * 20.0;
    for (const auto& e : t.events) {
      if (e.onset < end) covered.push_back(e.word);
    }
    CHECK(concatenated == covered);
  }
}

TEST_CASE("window manifest round trip") {
  TempDir dir;
  auto t = transcript_from({{"a", 0.0}, {"b", 3.0}, {"c", 25.0}});
  auto ws = window_run(make_run(20), t);
  write_window_manifest(dir / "w.jsonl", ws);
  auto records = read_window_manifest(dir / "w.jsonl");
  REQUIRE(records.size() == 2);
  CHECK(records[0].text == "a b");
  CHECK(records[0].annotated == annotate_special_tokens(ws[0]));
  CHECK(records[1].start == 20.0);
  CHECK(records[1].n_tr == 10);
  CHECK(records[1].words_per_tr == ws[1].words_per_tr);
}
