#include "bpgpt/error.hpp"
#include "bpgpt/lm.hpp"
#include "bpgpt/objectives.hpp"
#include "bpgpt/optim.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace bpgpt;
using bpgpt::testing::random_matrix;
using bpgpt::testing::TempDir;
using ag::Matrix;

namespace {

lm::LmConfig small_config(std::uint64_t seed = 3) {
  lm::LmConfig c;
  c.embed_dim = 16;
  c.layers = 2;
  c.heads = 4;
  c.max_context = 32;
  c.seed = seed;
  return c;
}

lm::Vocab toy_vocab() { return lm::Vocab::from_words({"a", "b", "c", "d"}); }

}  // namespace

TEST_CASE("tokenize examples") {
  const auto v = toy_vocab();
  CHECK(lm::tokenize("= a b $", v) ==
        lm::TokenSeq{v.start_id(), v.id("a"), v.id("b"), v.tr_mark_id()});
  CHECK(lm::tokenize("", v).empty());
  CHECK(lm::tokenize("zzz", v) == lm::TokenSeq{v.unk_id()});
  const auto ids = lm::tokenize("  a   b  $ c ", v);
  CHECK(lm::detokenize(ids, v) == "a b $ c");
}

TEST_CASE("vocab contract") {
  const auto v = toy_vocab();
  CHECK(v.size() == 8);
  for (int i = 0; i < v.size(); ++i) CHECK(v.id(v.token(i)) == i);
  CHECK(v.is_mark(v.start_id()));
  CHECK(v.is_mark(v.tr_mark_id()));
  CHECK_FALSE(v.is_mark(v.id("a")));
  CHECK_THROWS_AS(lm::Vocab({"a", "a", "=", "$", "<unk>", "<pad>"}), ConfigError);
  CHECK_THROWS_AS(lm::Vocab({"a", "=", "<unk>", "<pad>"}), ConfigError);
  CHECK(lm::Vocab::from_words({"b", "a"}).hash() == lm::Vocab::from_words({"a", "b", "a"}).hash());
}

TEST_CASE("zero parameters with uniform bias give uniform rows") {
  lm::DecoderLM model(toy_vocab(), small_config());
  for (const auto& p : model.params().items()) {
    ag::Var v = p.var;
    v.mutable_value().setZero();
  }
  model.output_layer().bias.mutable_value().setConstant(0.25);
  PromptSeq prompt(Matrix::Zero(3, 16));
  Matrix probs = lm::softmax_rows(lm::lm_forward(model, prompt, lm::TokenSeq{4, 5, 6}).value());
  CHECK(probs.rows() == 6);
  CHECK(probs.cols() == 8);
  CHECK((probs.array() - 1.0 / 8.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("softmax rows sum to one") {
  lm::DecoderLM model(toy_vocab(), small_config());
  std::mt19937_64 rng(5);
  PromptSeq prompt(random_matrix(2, 16, rng));
  Matrix probs = lm::softmax_rows(model.forward(prompt, lm::TokenSeq{1, 2, 3, 4, 5}).value());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) CHECK(std::abs(probs.row(r).sum() - 1.0) < 1e-6);
}

TEST_CASE("forward is causal over tokens") {
  lm::DecoderLM model(toy_vocab(), small_config());
  std::mt19937_64 rng(6);
  PromptSeq prompt(random_matrix(3, 16, rng));
  const lm::TokenSeq base{4, 5, 6, 7, 4, 5};
  const Matrix ref = model.forward(prompt, base).value();
  const int k = 3;
  for (std::size_t j = 0; j < base.size(); ++j) {
    lm::TokenSeq changed = base;
    changed[j] = changed[j] == 4 ? 7 : 4;
    const Matrix out = model.forward(prompt, changed).value();
    // Token j (0-based) sits at row k+j; rows before it must not move.
    const Eigen::Index unchanged = k + Eigen::Index(j);
    CHECK(out.topRows(unchanged) == ref.topRows(unchanged));
    CHECK(out.row(unchanged) != ref.row(unchanged));
  }
}

TEST_CASE("forward determinism and errors") {
  lm::DecoderLM a(toy_vocab(), small_config(9));
  lm::DecoderLM b(toy_vocab(), small_config(9));
  PromptSeq prompt(Matrix::Constant(2, 16, 0.1));
  const lm::TokenSeq toks{4, 5, 6};
  CHECK(a.forward(prompt, toks).value() == a.forward(prompt, toks).value());
  CHECK(a.forward(prompt, toks).value() == b.forward(prompt, toks).value());
  CHECK(a.params().checksum() == b.params().checksum());

  CHECK_THROWS_AS(a.forward(PromptSeq(Matrix::Zero(2, 8)), toks), ShapeError);
  CHECK_THROWS_AS(a.forward(PromptSeq(Matrix::Zero(30, 16)), toks), LengthError);
  CHECK_NOTHROW(a.forward(PromptSeq(Matrix::Zero(29, 16)), toks));
}

TEST_CASE("freeze and update contracts") {
  lm::DecoderLM model(toy_vocab(), small_config());
  PromptSeq prompt(Matrix::Constant(2, 16, 0.3));
  std::vector<lm::TokenSeq> targets{{4, 5, 6}};
  auto run_steps = [&](int steps) {
    std::vector<ag::Var> all;
    for (const auto& p : model.params().items()) all.push_back(p.var);
    optim::AdamW opt(all, {});
    for (int i = 0; i < steps; ++i) {
      model.params().zero_grad();
      auto loss = objectives::reconstruction_loss(model, std::vector<PromptSeq>{prompt}, targets);
      if (loss.node()->requires_grad) ag::backward(loss);
      opt.step(1e-2);
    }
  };
  const auto before = model.params().checksum();
  lm::set_trainable(model, false);
  run_steps(10);
  CHECK(model.params().checksum() == before);

  lm::set_trainable(model, true);
  run_steps(1);
  const auto after_update = model.params().checksum();
  CHECK(after_update != before);

  lm::set_trainable(model, false);
  run_steps(5);
  CHECK(model.params().checksum() == after_update);
}

TEST_CASE("save and load reproduce forward passes") {
  TempDir dir;
  lm::DecoderLM model(toy_vocab(), small_config(4));
  model.save(dir.path());
  lm::DecoderLM back = lm::DecoderLM::load(dir.path());
  PromptSeq prompt(Matrix::Constant(2, 16, -0.2));
  const lm::TokenSeq toks{4, 6, 2, 3};
  CHECK(back.forward(prompt, toks).value() == model.forward(prompt, toks).value());
  CHECK(back.vocab().tokens() == model.vocab().tokens());
  CHECK(back.params().checksum() == model.params().checksum());

  lm::DecoderLM copy = model.clone();
  ag::Var first = copy.params().items().front().var;
  first.mutable_value()(0, 0) += 1.0;
  CHECK(copy.params().checksum() != model.params().checksum());
}
