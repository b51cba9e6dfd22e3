#include "bpgpt/error.hpp"
#include "bpgpt/objectives.hpp"
#include "bpgpt/prompting.hpp"
#include "test_support.hpp"

#include <doctest.h>

using namespace bpgpt;
using namespace bpgpt::prompting;
using bpgpt::testing::all_params;
using bpgpt::testing::gradient_check;
using bpgpt::testing::random_matrix;
using bpgpt::testing::TempDir;
using ag::Matrix;
using ag::Var;

namespace {

MapperConfig small(int in, int out, int k, std::uint64_t seed = 1) {
  MapperConfig c;
  c.input_dim = in;
  c.width = 16;
  c.layers = 2;
  c.heads = 2;
  c.prompt_length = k;
  c.output_dim = out;
  c.max_input_length = 16;
  c.seed = seed;
  return c;
}

TextEncoderStates fake_states(int n, int dim, std::mt19937_64& rng) {
  return {random_matrix(n, dim, rng), std::vector<bool>(std::size_t(n), true)};
}

}  // namespace

TEST_CASE("text mapper shapes and determinism") {
  std::mt19937_64 rng(1);
  PromptMapper mapper(small(64, 128, 30));
  auto states = fake_states(12, 64, rng);
  PromptSeq p = map_text_to_prompt(mapper, states);
  CHECK(p.length() == 30);
  CHECK(p.dim() == 128);
  CHECK(map_text_to_prompt(mapper, states).value() == p.value());
  for (int n : {1, 3, 16}) CHECK(map_text_to_prompt(mapper, fake_states(n, 64, rng)).length() == 30);
  CHECK_THROWS_AS(map_text_to_prompt(mapper, fake_states(17, 64, rng)), LengthError);
  CHECK(map_text_to_prompt(mapper, states, TextInput::pooled).length() == 30);
  CHECK_THROWS_AS(map_text_to_prompt(mapper, fake_states(4, 32, rng)), ShapeError);
}

TEST_CASE("masked text states are ignored") {
  std::mt19937_64 rng(2);
  PromptMapper mapper(small(8, 8, 3));
  auto states = fake_states(5, 8, rng);
  states.mask = {true, true, false, true, false};
  TextEncoderStates kept{Matrix(3, 8), {true, true, true}};
  kept.states.row(0) = states.states.row(0);
  kept.states.row(1) = states.states.row(1);
  kept.states.row(2) = states.states.row(3);
  CHECK(map_text_to_prompt(mapper, states).value() == map_text_to_prompt(mapper, kept).value());
}

TEST_CASE("zero output projection gives a zero prompt") {
  std::mt19937_64 rng(3);
  PromptMapper mapper(small(8, 12, 4));
  mapper.output_projection().weight.mutable_value().setZero();
  mapper.output_projection().bias.mutable_value().setZero();
  for (int n : {1, 6}) {
    CHECK(map_text_to_prompt(mapper, fake_states(n, 8, rng)).value().isZero());
  }
}

TEST_CASE("fMRI encoder shapes and order sensitivity") {
  std::mt19937_64 rng(4);
  PromptMapper encoder(small(500, 128, 30));
  Matrix frames = random_matrix(10, 500, rng);
  PromptSeq p = encode_fmri_to_prompt(encoder, frames);
  CHECK(p.length() == 30);
  CHECK(p.dim() == 128);
  CHECK(encode_fmri_to_prompt(encoder, frames).value() == p.value());
  CHECK(encode_fmri_to_prompt(encoder, frames.topRows(1)).length() == 30);

  Matrix reversed = frames.colwise().reverse();
  CHECK((encode_fmri_to_prompt(encoder, reversed).value() - p.value()).norm() > 1e-8);

  CHECK_THROWS_AS(encode_fmri_to_prompt(encoder, random_matrix(10, 499, rng)), ShapeError);
}

TEST_CASE("full-scale mapper configuration") {
  auto c = MapperConfig::full_scale(768, 768);
  CHECK(c.width == 512);
  CHECK(c.layers == 8);
  CHECK(c.heads == 8);
  CHECK(c.prompt_length == 30);
}

TEST_CASE("text encoder is deterministic and frozen") {
  TextEncoder enc;
  auto a = enc.encode({"the", "old", "man"});
  CHECK(a.states.rows() == 4);
  CHECK(a.states.cols() == enc.dim());
  CHECK(enc.encode({"the", "old", "man"}).states == a.states);
  CHECK(enc.encode({}).states.rows() == 1);
  CHECK(enc.encode({"man", "old", "the"}).states != a.states);
  for (const auto& p : enc.params().items()) CHECK_FALSE(p.var.requires_grad());
}

TEST_CASE("mapper and encoder gradients match finite differences") {
  std::mt19937_64 rng(5);
  lm::LmConfig lc;
  lc.embed_dim = 8;
  lc.layers = 2;
  lc.heads = 2;
  lc.max_context = 32;
  lm::DecoderLM model(lm::Vocab::from_words({"a", "b", "c"}), lc);
  lm::set_trainable(model, false);
  PromptMapper mapper(small(6, 8, 2, 11));
  PromptMapper encoder(small(5, 8, 2, 12));
  const std::vector<TextEncoderStates> text{fake_states(4, 6, rng), fake_states(3, 6, rng)};
  const std::vector<Matrix> frames{random_matrix(3, 5, rng), random_matrix(3, 5, rng)};
  const std::vector<lm::TokenSeq> targets{{2, 4, 5}, {6, 3}};

  auto text_loss = [&] {
    std::vector<PromptSeq> prompts;
    for (const auto& s : text) prompts.push_back(map_text_to_prompt(mapper, s));
    return objectives::text_reconstruction_loss(model, prompts, targets);
  };
  CHECK(gradient_check(text_loss, all_params(mapper.params())) < 1e-4);

  mapper.set_trainable(false);
  auto brain_loss = [&] {
    objectives::Batch b;
    for (std::size_t i = 0; i < 2; ++i) {
      b.prompts_brain.push_back(encode_fmri_to_prompt(encoder, frames[i]));
      b.prompts_text.push_back(map_text_to_prompt(mapper, text[i]));
      b.token_targets.push_back(targets[i]);
    }
    return objectives::total_loss(model, b, 1.0, {0.1}).total;
  };
  CHECK(gradient_check(brain_loss, all_params(encoder.params())) < 1e-4);
}

TEST_CASE("mapper save, load and clone") {
  TempDir dir;
  std::mt19937_64 rng(6);
  PromptMapper mapper(small(7, 9, 3, 21));
  mapper.save(dir.path(), "mapper");
  PromptMapper back = PromptMapper::load(dir.path(), "mapper");
  auto states = fake_states(4, 7, rng);
  CHECK(map_text_to_prompt(back, states).value() == map_text_to_prompt(mapper, states).value());
  CHECK(back.config().prompt_length == 3);

  PromptMapper copy = mapper.clone();
  Var w = copy.params().items().front().var;
  w.mutable_value().array() += 1.0;
  CHECK(copy.params().checksum() != mapper.params().checksum());
}
