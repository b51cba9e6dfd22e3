#include "bpgpt/infer.hpp"

#include "bpgpt/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

namespace bpgpt::infer {

using json = nlohmann::json;

json WordRateModel::to_json() const {
  return {{"weights", std::vector<double>(weights.data(), weights.data() + weights.size())},
          {"intercept", intercept},
          {"reg", reg}};
}

WordRateModel WordRateModel::from_json(const json& j) {
  WordRateModel m;
  auto w = j.at("weights").get<std::vector<double>>();
  m.weights = Eigen::Map<Eigen::VectorXd>(w.data(), Eigen::Index(w.size()));
  m.intercept = j.at("intercept").get<double>();
  m.reg = j.at("reg").get<double>();
  return m;
}

WordRateModel fit_word_rate_model(const Matrix& features, const Eigen::VectorXd& targets, double reg) {
  if (reg < 0.0) throw ConfigError("ridge penalty must be >= 0");
  if (features.rows() != targets.size()) throw ShapeError("word rate: rows != targets");
  if (features.rows() < 2) throw ValidationError("word rate: need at least 2 samples");
  const Eigen::RowVectorXd mean_x = features.colwise().mean();
  const double mean_y = targets.mean();
  const Eigen::MatrixXd xc = features.rowwise() - mean_x;
  const Eigen::VectorXd yc = targets.array() - mean_y;
  const Eigen::Index n = xc.rows();
  const Eigen::Index p = xc.cols();

  WordRateModel model;
  model.reg = reg;
  // Solve in whichever of the primal (p x p) or dual (n x n) spaces is smaller.
  Eigen::MatrixXd gram = p <= n ? Eigen::MatrixXd(xc.transpose() * xc) : Eigen::MatrixXd(xc * xc.transpose());
  gram.diagonal().array() += reg;
  Eigen::VectorXd rhs = p <= n ? Eigen::VectorXd(xc.transpose() * yc) : yc;
  Eigen::VectorXd sol;
  if (reg == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(gram);
    if (qr.rank() < gram.rows()) {
      throw NumericalError("word rate: singular design with zero ridge penalty");
    }
    sol = qr.solve(rhs);
  } else {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success) throw NumericalError("word rate: factorisation failed");
    sol = ldlt.solve(rhs);
  }
  model.weights = p <= n ? sol : Eigen::VectorXd(xc.transpose() * sol);
  model.intercept = mean_y - mean_x.dot(model.weights);
  return model;
}

WordRateModel fit_word_rate_model(std::span<const corpus::Window> windows, double reg) {
  if (windows.size() < 2) throw ValidationError("word rate: need at least 2 training windows");
  Eigen::Index rows = 0;
  for (const auto& w : windows) rows += w.frames.rows();
  const Eigen::Index p = windows.front().frames.cols();
  Matrix x(rows, p);
  Eigen::VectorXd y(rows);
  Eigen::Index r = 0;
  for (const auto& w : windows) {
    if (w.frames.cols() != p) throw ShapeError("word rate: windows differ in voxel count");
    if (Eigen::Index(w.words_per_tr.size()) != w.frames.rows()) {
      throw ShapeError("word rate: words_per_tr length != frame count");
    }
    x.middleRows(r, w.frames.rows()) = w.frames;
    for (int c : w.words_per_tr) y(r++) = c;
  }
  return fit_word_rate_model(x, y, reg);
}

Eigen::VectorXd predict_rates(const WordRateModel& model, const Matrix& frames) {
  if (frames.cols() != model.n_features()) {
    throw ShapeError("word rate: frames have " + std::to_string(frames.cols()) +
                     " voxels, model expects " + std::to_string(model.n_features()));
  }
  return (frames * model.weights).array() + model.intercept;
}

int predict_word_count(const WordRateModel& model, const Matrix& frames) {
  const Eigen::VectorXd rates = predict_rates(model, frames);
  int total = 0;
  for (double r : rates) total += static_cast<int>(std::max(0.0, std::round(r)));
  return total;
}

double r_squared(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual) {
  const double ss_res = (actual - predicted).squaredNorm();
  const double ss_tot = (actual.array() - actual.mean()).square().sum();
  return ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
}

const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::word_budget: return "word_budget";
    case StopReason::dollar_count: return "dollar_count";
    case StopReason::length_cap: return "length_cap";
  }
  return "unknown";
}

namespace {

int pick_next(const Eigen::RowVectorXd& logits, const lm::Vocab& vocab, const DecodeOptions& opt,
              std::mt19937_64& rng) {
  Eigen::RowVectorXd z = logits;
  z(vocab.pad_id()) = -std::numeric_limits<double>::infinity();
  if (opt.temperature <= 0.0) {
    Eigen::Index best = 0;
    z.maxCoeff(&best);
    return int(best);
  }
  std::vector<int> order(std::size_t(z.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::size_t keep = order.size();
  if (opt.top_k > 0 && std::size_t(opt.top_k) < keep) {
    keep = std::size_t(opt.top_k);
    std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(keep), order.end(),
                      [&](int a, int b) { return z(a) > z(b) || (z(a) == z(b) && a < b); });
  }
  const double mx = z.maxCoeff();
  std::vector<double> w(keep);
  for (std::size_t i = 0; i < keep; ++i) w[i] = std::exp((z(order[i]) - mx) / opt.temperature);
  std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
  return order[dist(rng)];
}

struct Decoder {
  const lm::DecoderLM& lm;
  const PromptSeq& prompt;
  const DecodeOptions& options;
  std::mt19937_64 rng;
  lm::TokenSeq context;

  bool room() const {
    return prompt.length() + Eigen::Index(context.size()) + 1 <= lm.config().max_context;
  }

  int step() {
    ag::NoGradGuard no_grad;
    ag::Matrix logits = lm.forward(prompt, context).value();
    return pick_next(logits.row(logits.rows() - 1), lm.vocab(), options, rng);
  }
};

GenerationResult finish(const lm::TokenSeq& generated, const lm::Vocab& vocab, StopReason reason) {
  GenerationResult out;
  out.tokens = generated;
  out.stop_reason = reason;
  std::vector<std::string> words;
  for (int id : generated) {
    if (!vocab.is_mark(id)) words.push_back(vocab.token(id));
  }
  out.surface_text = corpus::join_words(words);
  return out;
}

}  // namespace

GenerationResult generate_word_rate(const lm::DecoderLM& lm, const PromptSeq& prompt,
                                    int word_budget, int cap, const DecodeOptions& options) {
  if (word_budget < 0) throw ConfigError("word budget must be >= 0");
  if (prompt.length() < 1) throw ShapeError("generation needs a prompt");
  Decoder dec{lm, prompt, options, std::mt19937_64(options.seed), {}};
  const auto& vocab = lm.vocab();
  int words = 0;
  while (words < word_budget) {
    if (int(dec.context.size()) >= cap || !dec.room()) {
      return finish(dec.context, vocab, StopReason::length_cap);
    }
    int id = dec.step();
    dec.context.push_back(id);
    if (!vocab.is_mark(id)) ++words;
  }
  return finish(dec.context, vocab, StopReason::word_budget);
}

GenerationResult generate_special_token(const lm::DecoderLM& lm, const PromptSeq& prompt, int n_tr,
                                        int cap, const DecodeOptions& options) {
  if (n_tr < 1) throw ConfigError("special-token generation needs n_tr >= 1");
  const auto& vocab = lm.vocab();
  Decoder dec{lm, prompt, options, std::mt19937_64(options.seed), {vocab.start_id()}};
  int marks = 0;
  while (true) {
    if (int(dec.context.size()) - 1 >= cap || !dec.room()) {
      return finish(lm::TokenSeq(dec.context.begin() + 1, dec.context.end()), vocab,
                    StopReason::length_cap);
    }
    int id = dec.step();
    dec.context.push_back(id);
    if (id == vocab.tr_mark_id() && ++marks == n_tr) {
      return finish(lm::TokenSeq(dec.context.begin() + 1, dec.context.end()), vocab,
                    StopReason::dollar_count);
    }
  }
}

int word_rate_cap(int word_budget) { return 4 * std::max(0, word_budget); }

int special_token_cap(int n_tr, double mean_words_per_tr) {
  return static_cast<int>(std::ceil(4.0 * double(n_tr) * (std::max(0.0, mean_words_per_tr) + 1.0)));
}

void write_inference_report(const std::filesystem::path& path,
                            const std::vector<InferenceRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write inference report " + path.string());
  for (const auto& r : records) {
    json j = {{"window_id", r.window_id},
              {"strategy", r.strategy},
              {"stop_reason", to_string(r.stop_reason)},
              {"predicted_words", r.predicted_words},
              {"actual_words", r.actual_words},
              {"generated", r.generated},
              {"reference", r.reference}};
    out << j.dump() << "\n";
  }
}

std::vector<InferenceRecord> read_inference_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open inference report " + path.string());
  std::vector<InferenceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      InferenceRecord r;
      r.window_id = j.at("window_id").get<std::string>();
      r.strategy = j.at("strategy").get<std::string>();
      const auto reason = j.at("stop_reason").get<std::string>();
      r.stop_reason = reason == "word_budget"    ? StopReason::word_budget
                      : reason == "dollar_count" ? StopReason::dollar_count
                                                 : StopReason::length_cap;
      r.predicted_words = j.at("predicted_words").get<int>();
      r.actual_words = j.at("actual_words").get<int>();
      r.generated = j.at("generated").get<std::string>();
      r.reference = j.at("reference").get<std::string>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  return out;
}

}  // namespace bpgpt::infer
