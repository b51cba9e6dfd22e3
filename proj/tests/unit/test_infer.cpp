#include "bpgpt/error.hpp"
#include "bpgpt/infer.hpp"
#include "bpgpt/train.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>

using namespace bpgpt;
using namespace bpgpt::infer;
using bpgpt::testing::random_matrix;
using bpgpt::testing::TempDir;
using ag::Matrix;

namespace {

lm::DecoderLM tiny_lm(std::vector<std::string> words, int d = 16, std::uint64_t seed = 1) {
  lm::LmConfig c;
  c.embed_dim = d;
  c.layers = 1;
  c.heads = 2;
  c.max_context = 128;
  c.seed = seed;
  return lm::DecoderLM(lm::Vocab::from_words(words), c);
}

// Zero network with a single dominant output bias: always emits `token`.
lm::DecoderLM constant_lm(const std::string& token) {
  auto model = tiny_lm({"a", "b", "c"});
  for (const auto& p : model.params().items()) {
    ag::Var v = p.var;
    v.mutable_value().setZero();
  }
  model.output_layer().bias.mutable_value()(0, model.vocab().id(token)) = 10.0;
  return model;
}

// Closed-form ridge with an unpenalised intercept column, solved directly
// from the augmented normal equations.
Eigen::VectorXd ridge_oracle(const Matrix& x, const Eigen::VectorXd& y, double reg) {
  Matrix xa(x.rows(), x.cols() + 1);
  xa.leftCols(x.cols()) = x;
  xa.col(x.cols()).setOnes();
  Matrix a = xa.transpose() * xa;
  for (Eigen::Index i = 0; i < x.cols(); ++i) a(i, i) += reg;
  return a.fullPivLu().solve(xa.transpose() * y);
}

lm::DecoderLM overfit(const std::string& text, std::vector<std::string> words) {
  auto model = tiny_lm(std::move(words), 16, 5);
  train::PretrainConfig pc;
  pc.epochs = 150;
  pc.batch_size = 1;
  pc.lr = 1e-2;
  pc.weight_decay = 0.0;
  std::vector<std::string> texts{text};
  train::pretrain_lm(model, texts, pc);
  return model;
}

const PromptSeq kZeroPrompt(Matrix::Zero(1, 16));

}  // namespace

TEST_CASE("word rate ridge matches the closed-form oracle") {
  std::mt19937_64 rng(1);
  Matrix x = random_matrix(60, 5, rng);
  Eigen::VectorXd w(5);
  w << 0.5, -1.0, 2.0, 0.0, 0.3;
  Eigen::VectorXd noise = random_matrix(60, 1, rng, 0.1);
  Eigen::VectorXd y = (x * w).array() + 1.5 + noise.array();
  for (double reg : {1e-3, 1.0, 25.0}) {
    WordRateModel m = fit_word_rate_model(x, y, reg);
    Eigen::VectorXd oracle = ridge_oracle(x, y, reg);
    CHECK((m.weights - oracle.head(5)).norm() < 1e-8);
    CHECK(std::abs(m.intercept - oracle(5)) < 1e-8);
  }
  WordRateModel fit = fit_word_rate_model(x, y, 1e-3);
  CHECK(r_squared(predict_rates(fit, x), y) > 0.9);

  // More features than samples takes the dual path.
  Matrix wide = random_matrix(8, 20, rng);
  Eigen::VectorXd yw = random_matrix(8, 1, rng);
  WordRateModel mw = fit_word_rate_model(wide, yw, 0.5);
  Eigen::VectorXd ow = ridge_oracle(wide, yw, 0.5);
  CHECK((mw.weights - ow.head(20)).norm() < 1e-8);
  CHECK(std::abs(mw.intercept - ow(20)) < 1e-8);
}

TEST_CASE("word rate limits and errors") {
  std::mt19937_64 rng(2);
  Matrix x = random_matrix(30, 4, rng);
  Eigen::VectorXd c = Eigen::VectorXd::Constant(30, 3.0);
  WordRateModel constant = fit_word_rate_model(x, c, 1e-9);
  CHECK((predict_rates(constant, x).array() - 3.0).abs().maxCoeff() < 1e-6);

  Eigen::VectorXd y = random_matrix(30, 1, rng);
  WordRateModel heavy = fit_word_rate_model(x, y, 1e12);
  CHECK(heavy.weights.norm() < 1e-9);
  CHECK(std::abs(heavy.intercept - y.mean()) < 1e-9);

  Matrix singular(5, 3);
  singular.col(0) = random_matrix(5, 1, rng);
  singular.col(1) = singular.col(0);
  singular.col(2) = random_matrix(5, 1, rng);
  CHECK_THROWS_AS(fit_word_rate_model(singular, Eigen::VectorXd::Ones(5), 0.0), NumericalError);
  CHECK_NOTHROW(fit_word_rate_model(singular, Eigen::VectorXd::Ones(5), 0.1));
  CHECK_THROWS_AS(fit_word_rate_model(x, y, -1.0), ConfigError);
}

TEST_CASE("predict_word_count rounding and clamping") {
  WordRateModel m;
  m.weights = Eigen::VectorXd::Zero(3);
  m.intercept = 2.4;
  CHECK(predict_word_count(m, Matrix::Random(10, 3)) == 20);
  m.intercept = -1.0;
  CHECK(predict_word_count(m, Matrix::Random(10, 3)) == 0);
  m.weights << 1.0, 0.0, 0.0;
  m.intercept = 0.0;
  Matrix f = Matrix::Zero(3, 3);
  f.col(0) << 1.6, -4.0, 2.2;
  CHECK(predict_word_count(m, f) == 4);
  CHECK_THROWS_AS(predict_word_count(m, Matrix::Zero(3, 2)), ShapeError);
}

TEST_CASE("word rate model round trips through JSON") {
  WordRateModel m;
  m.weights = Eigen::VectorXd::LinSpaced(4, -1.0, 1.0);
  m.intercept = 0.25;
  m.reg = 3.0;
  WordRateModel back = WordRateModel::from_json(m.to_json());
  CHECK(back.weights == m.weights);
  CHECK(back.intercept == m.intercept);
  CHECK(back.reg == m.reg);
}

TEST_CASE("word-budget generation contracts") {
  auto words = constant_lm("a");
  auto zero = generate_word_rate(words, kZeroPrompt, 0, word_rate_cap(0));
  CHECK(zero.tokens.empty());
  CHECK(zero.surface_text.empty());
  CHECK(zero.stop_reason == StopReason::word_budget);

  auto five = generate_word_rate(words, kZeroPrompt, 5, word_rate_cap(5));
  CHECK(five.stop_reason == StopReason::word_budget);
  CHECK(five.surface_text == "a a a a a");

  auto marks = constant_lm("=");
  auto capped = generate_word_rate(marks, kZeroPrompt, 3, 7);
  CHECK(capped.stop_reason == StopReason::length_cap);
  CHECK(capped.tokens.size() == 7);
  CHECK(capped.surface_text.empty());
  CHECK_THROWS_AS(generate_word_rate(words, kZeroPrompt, -1, 4), ConfigError);
}

TEST_CASE("special-token generation contracts") {
  auto dollars = constant_lm("$");
  auto r = generate_special_token(dollars, kZeroPrompt, 3, 100);
  CHECK(r.stop_reason == StopReason::dollar_count);
  CHECK(r.tokens.size() == 3);
  CHECK(r.surface_text.empty());

  auto words = constant_lm("b");
  auto capped = generate_special_token(words, kZeroPrompt, 10, special_token_cap(10, 1.0));
  CHECK(capped.stop_reason == StopReason::length_cap);
  CHECK(int(capped.tokens.size()) == special_token_cap(10, 1.0));
  CHECK(special_token_cap(10, 1.0) == 80);
  CHECK(word_rate_cap(7) == 28);
  CHECK_THROWS_AS(generate_special_token(words, kZeroPrompt, 0, 10), ConfigError);
}

TEST_CASE("generation never emits padding") {
  auto pad = constant_lm("<pad>");
  auto r = generate_word_rate(pad, kZeroPrompt, 3, 12);
  for (int id : r.tokens) CHECK(id != pad.vocab().pad_id());
}

TEST_CASE("overfit LMs reproduce their sentence") {
  auto sentence = overfit("the old man saw rain", {"the", "old", "man", "saw", "rain"});
  auto r = generate_word_rate(sentence, kZeroPrompt, 5, word_rate_cap(5));
  CHECK(r.surface_text == "the old man saw rain");

  auto annotated = overfit("= a b $ c $", {"a", "b", "c"});
  auto s = generate_special_token(annotated, kZeroPrompt, 2, special_token_cap(2, 1.5));
  CHECK(s.stop_reason == StopReason::dollar_count);
  CHECK(s.surface_text == "a b c");
}

TEST_CASE("sampled generation is seed-deterministic and respects stops") {
  auto model = tiny_lm({"a", "b", "c", "d"}, 16, 9);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    PromptSeq prompt(random_matrix(2, 16, rng));
    DecodeOptions opt{1.0, trial % 3 == 0 ? 2 : 0, std::uint64_t(trial)};
    const int n_tr = 1 + trial % 4;
    auto a = generate_special_token(model, prompt, n_tr, 30, opt);
    auto b = generate_special_token(model, prompt, n_tr, 30, opt);
    CHECK(a.tokens == b.tokens);
    const auto marks = std::count(a.tokens.begin(), a.tokens.end(), model.vocab().tr_mark_id());
    CHECK(marks <= n_tr);
    if (a.stop_reason == StopReason::dollar_count) {
      CHECK(marks == n_tr);
      CHECK(a.tokens.back() == model.vocab().tr_mark_id());
    }
    CHECK(a.surface_text.find('$') == std::string::npos);
    CHECK(a.surface_text.find('=') == std::string::npos);

    auto w = generate_word_rate(model, prompt, n_tr + 2, 40, opt);
    if (w.stop_reason == StopReason::word_budget) {
      CHECK(int(corpus::split_words(w.surface_text).size()) == n_tr + 2);
    }
  }
}

TEST_CASE("inference report round trip") {
  TempDir dir;
  std::vector<InferenceRecord> recs{
      {"s1@0.000", "word_rate", StopReason::word_budget, 5, 6, "a b c d e", "a b c d e f"},
      {"s1@20.000", "special_token", StopReason::length_cap, -1, 3, "", "x y z"}};
  write_inference_report(dir / "r.jsonl", recs);
  auto back = read_inference_report(dir / "r.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].generated == "a b c d e");
  CHECK(back[1].stop_reason == StopReason::length_cap);
  CHECK(back[1].reference == "x y z");
  testing::write_text(dir / "bad.jsonl", "{\"window_id\": 1}\n");
  CHECK_THROWS_AS(read_inference_report(dir / "bad.jsonl"), ParseError);
}
