#include "bpgpt/corpus.hpp"

#include "bpgpt/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace bpgpt::corpus {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kBoundaryEps = 1e-9;

std::string normalize_word(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  for (unsigned char c : raw) {
    if (std::isalnum(c) || c == '\'' || c >= 0x80) {
      out.push_back(static_cast<char>(std::tolower(c)));
    } else if (c == ' ') {
      out.push_back(' ');
    }
  }
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_seconds(const std::string& field, const fs::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    double v = std::stod(field, &used);
    if (used != field.size() || !std::isfinite(v)) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError(path.string(), line, "not a number: '" + field + "'");
  }
}

long tr_index(double seconds, double tr) {
  return static_cast<long>(std::floor(seconds / tr + kBoundaryEps));
}

}  // namespace

const std::set<std::string>& default_annotations() {
  static const std::set<std::string> labels = {"cough", "laugh", "lip smack", "lipsmack",
                                               "misc noise", "silence", "breath", "ns", "sp"};
  return labels;
}

Matrix FmriRun::roi_frames() const {
  if (!roi_mask) return frames;
  const auto& mask = *roi_mask;
  Eigen::Index width = std::count(mask.begin(), mask.end(), true);
  Matrix out(frames.rows(), width);
  Eigen::Index c = 0;
  for (std::size_t v = 0; v < mask.size(); ++v) {
    if (mask[v]) out.col(c++) = frames.col(Eigen::Index(v));
  }
  return out;
}

void FmriRun::validate() const {
  if (tr_seconds <= 0.0) throw ValidationError("fMRI run " + story_id + ": tr_seconds must be > 0");
  if (frames.rows() < 1) throw ValidationError("fMRI run " + story_id + ": no frames");
  if (!frames.allFinite()) throw ValidationError("fMRI run " + story_id + ": non-finite frame");
  if (roi_mask && Eigen::Index(roi_mask->size()) != frames.cols()) {
    throw ValidationError("fMRI run " + story_id + ": roi_mask length != voxel count");
  }
}

StimulusTranscript load_transcript(const fs::path& path, bool drop_annotations,
                                   const std::set<std::string>& annotations) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open transcript " + path.string());
  StimulusTranscript t;
  t.story_id = path.stem().string();
  t.annotations = annotations;

  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_tabs(line);
    if (!header_seen) {
      header_seen = true;
      if (fields.size() == 3 && fields[0] == "word") continue;
      throw ParseError(path.string(), lineno, "expected header 'word\\tonset\\toffset'");
    }
    if (fields.size() != 3) {
      throw ParseError(path.string(), lineno,
                       "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
    }
    WordEvent e;
    e.onset = parse_seconds(fields[1], path, lineno);
    e.offset = parse_seconds(fields[2], path, lineno);
    if (e.onset < 0.0) throw ParseError(path.string(), lineno, "negative onset");
    if (e.onset > e.offset) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": onset " +
                            fields[1] + " > offset " + fields[2]);
    }
    e.word = normalize_word(fields[0]);
    if (drop_annotations && annotations.contains(e.word)) continue;
    // Multi-word labels never survive as decoding targets; bare punctuation is dropped.
    if (e.word.empty() || e.word.find(' ') != std::string::npos) continue;
    t.events.push_back(std::move(e));
  }
  std::stable_sort(t.events.begin(), t.events.end(),
                   [](const WordEvent& a, const WordEvent& b) { return a.onset < b.onset; });
  return t;
}

void save_transcript(const fs::path& path, const StimulusTranscript& transcript) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write transcript " + path.string());
  out << "word\tonset\toffset\n";
  // Shortest round-trip representation keeps TR assignment exact on reload.
  auto fmt = [](double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  };
  for (const auto& e : transcript.events) {
    out << e.word << '\t' << fmt(e.onset) << '\t' << fmt(e.offset) << '\n';
  }
}

FmriRun load_fmri_run(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open fMRI manifest " + manifest_path.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("fMRI manifest " + manifest_path.string() + ": " + e.what());
  }
  FmriRun run;
  Eigen::Index n_tr = 0;
  Eigen::Index n_vox = 0;
  std::string data_file;
  try {
    run.story_id = m.at("story_id").get<std::string>();
    run.subject_id = m.at("subject_id").get<std::string>();
    run.tr_seconds = m.at("tr_seconds").get<double>();
    run.roi = m.value("roi", std::string("all"));
    n_tr = m.at("shape").at(0).get<Eigen::Index>();
    n_vox = m.at("shape").at(1).get<Eigen::Index>();
    data_file = m.at("data").get<std::string>();
    if (m.value("dtype", std::string("float64-le")) != "float64-le") {
      throw DataError("unsupported dtype " + m["dtype"].get<std::string>());
    }
    if (m.contains("roi_mask")) run.roi_mask = m["roi_mask"].get<std::vector<bool>>();
  } catch (const json::exception& e) {
    throw DataError("fMRI manifest " + manifest_path.string() + ": " + e.what());
  }
  fs::path data_path = manifest_path.parent_path() / data_file;
  std::ifstream bin(data_path, std::ios::binary);
  if (!bin) throw DataError("cannot open fMRI data " + data_path.string());
  run.frames.resize(n_tr, n_vox);
  bin.read(reinterpret_cast<char*>(run.frames.data()),
           static_cast<std::streamsize>(n_tr * n_vox * sizeof(double)));
  if (bin.gcount() != static_cast<std::streamsize>(n_tr * n_vox * sizeof(double))) {
    throw DataError("fMRI data " + data_path.string() + " shorter than manifest shape");
  }
  run.validate();
  return run;
}

fs::path save_fmri_run(const fs::path& dir, const std::string& stem, const FmriRun& run) {
  fs::create_directories(dir);
  json m;
  m["story_id"] = run.story_id;
  m["subject_id"] = run.subject_id;
  m["tr_seconds"] = run.tr_seconds;
  m["shape"] = {run.frames.rows(), run.frames.cols()};
  m["roi"] = run.roi;
  m["data"] = stem + ".f64";
  m["dtype"] = "float64-le";
  m["voxel_order"] = "row-major [tr][voxel]";
  if (run.roi_mask) m["roi_mask"] = *run.roi_mask;
  fs::path manifest = dir / (stem + ".json");
  std::ofstream(manifest) << m.dump(2) << "\n";
  std::ofstream bin(dir / (stem + ".f64"), std::ios::binary);
  bin.write(reinterpret_cast<const char*>(run.frames.data()),
            static_cast<std::streamsize>(run.frames.size() * sizeof(double)));
  if (!bin) throw DataError("cannot write fMRI data for " + stem);
  return manifest;
}

std::vector<Window> window_run(const FmriRun& run, const StimulusTranscript& transcript,
                               const WindowOptions& options) {
  run.validate();
  const double tr = run.tr_seconds;
  if (options.window_seconds <= 0.0) throw ConfigError("window length must be > 0");
  const double ratio = options.window_seconds / tr;
  const long per_window = std::lround(ratio);
  if (per_window < 1 || std::abs(ratio - double(per_window)) > 1e-9 * std::max(1.0, ratio)) {
    throw ConfigError("window length " + std::to_string(options.window_seconds) +
                      " s is not an integer multiple of TR " + std::to_string(tr) + " s");
  }
  if (options.tr_offset < 0) throw ConfigError("tr_offset must be >= 0");

  const Matrix frames = run.roi_frames();
  const long usable = long(run.n_tr()) - options.tr_offset;
  const long n_windows = usable > 0 ? usable / per_window : 0;

  std::vector<Window> windows(static_cast<std::size_t>(n_windows));
  for (long w = 0; w < n_windows; ++w) {
    Window& win = windows[std::size_t(w)];
    win.story_id = run.story_id;
    win.subject_id = run.subject_id;
    win.tr_seconds = tr;
    win.duration = options.window_seconds;
    win.first_tr = w * per_window;
    win.start = double(win.first_tr) * tr;
    win.frames = frames.middleRows(win.first_tr + options.tr_offset, per_window);
    win.words_per_tr.assign(std::size_t(per_window), 0);
  }
  for (const auto& e : transcript.events) {
    long t = tr_index(e.onset, tr);
    long w = t / per_window;
    if (w >= n_windows) continue;  // past the last full window
    Window& win = windows[std::size_t(w)];
    win.words.push_back(e.word);
    win.onsets.push_back(e.onset);
    win.words_per_tr[std::size_t(t - win.first_tr)] += 1;
  }
  return windows;
}

std::vector<int> words_per_tr(const Window& window) {
  const long n = std::lround(window.duration / window.tr_seconds);
  std::vector<int> counts(std::size_t(std::max(0L, n)), 0);
  for (double onset : window.onsets) {
    long t = tr_index(onset, window.tr_seconds) - window.first_tr;
    if (t < 0 || t >= n) throw ValidationError("word onset outside its window");
    counts[std::size_t(t)] += 1;
  }
  return counts;
}

std::string annotate_special_tokens(const std::vector<std::string>& words,
                                    const std::vector<int>& counts) {
  std::string out = kStartMark;
  std::size_t w = 0;
  for (int c : counts) {
    for (int i = 0; i < c; ++i) {
      if (w >= words.size()) throw ValidationError("words_per_tr sums past the word list");
      out += ' ';
      out += words[w++];
    }
    out += ' ';
    out += kTrMark;
  }
  if (w != words.size()) throw ValidationError("words_per_tr does not cover every word");
  return out;
}

std::string annotate_special_tokens(const Window& window) {
  return annotate_special_tokens(window.words, window.words_per_tr);
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::vector<std::string> strip_special_tokens(const std::string& text) {
  std::vector<std::string> out;
  for (auto& w : split_words(text)) {
    if (w != kStartMark && w != kTrMark) out.push_back(std::move(w));
  }
  return out;
}

void write_window_manifest(const fs::path& path, const std::vector<Window>& windows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write window manifest " + path.string());
  for (const auto& w : windows) {
    json rec;
    rec["story_id"] = w.story_id;
    rec["subject_id"] = w.subject_id;
    rec["start"] = w.start;
    rec["n_tr"] = w.n_tr();
    rec["words_per_tr"] = w.words_per_tr;
    rec["text"] = join_words(w.words);
    rec["annotated"] = annotate_special_tokens(w);
    out << rec.dump() << "\n";
  }
}

std::vector<WindowRecord> read_window_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open window manifest " + path.string());
  std::vector<WindowRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json rec = json::parse(line);
      WindowRecord r;
      r.story_id = rec.at("story_id").get<std::string>();
      r.subject_id = rec.at("subject_id").get<std::string>();
      r.start = rec.at("start").get<double>();
      r.n_tr = rec.at("n_tr").get<int>();
      r.words_per_tr = rec.at("words_per_tr").get<std::vector<int>>();
      r.text = rec.at("text").get<std::string>();
      r.annotated = rec.at("annotated").get<std::string>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  return out;
}

}  // namespace bpgpt::corpus
