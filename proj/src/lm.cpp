#include "bpgpt/lm.hpp"

#include "bpgpt/archive.hpp"
#include "bpgpt/corpus.hpp"
#include "bpgpt/error.hpp"

#include <algorithm>
#include <set>

namespace bpgpt::lm {

using json = nlohmann::json;

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2) throw ConfigError("vocabulary needs at least 2 tokens");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<int>(i));
    if (!inserted) throw ConfigError("duplicate vocabulary token '" + tokens_[i] + "'");
  }
  auto require = [&](const char* t) {
    auto it = index_.find(t);
    if (it == index_.end()) throw ConfigError(std::string("vocabulary lacks '") + t + "'");
    return it->second;
  };
  pad_ = require(kPadToken);
  unk_ = require(kUnkToken);
  start_ = require(corpus::kStartMark);
  tr_mark_ = require(corpus::kTrMark);
}

Vocab Vocab::from_words(const std::vector<std::string>& words) {
  std::vector<std::string> tokens = {kPadToken, kUnkToken, corpus::kStartMark, corpus::kTrMark};
  std::set<std::string> unique(words.begin(), words.end());
  for (const auto& t : tokens) unique.erase(t);
  tokens.insert(tokens.end(), unique.begin(), unique.end());
  return Vocab(std::move(tokens));
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk_ : it->second;
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  }
  return h;
}

TokenSeq tokenize(const std::string& text, const Vocab& vocab) {
  TokenSeq ids;
  for (const auto& w : corpus::split_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

json LmConfig::to_json() const {
  return {{"embed_dim", embed_dim},
          {"layers", layers},
          {"heads", heads},
          {"max_context", max_context},
          {"seed", seed}};
}

LmConfig LmConfig::from_json(const json& j) {
  LmConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.max_context = j.value("max_context", c.max_context);
  c.seed = j.value("seed", c.seed);
  return c;
}

DecoderLM::DecoderLM(Vocab vocab, LmConfig config) : vocab_(std::move(vocab)), config_(config) {
  if (config_.embed_dim < 1 || config_.layers < 0 || config_.max_context < 1) {
    throw ConfigError("invalid LM dimensions");
  }
  nn::Rng rng(config_.seed);
  const int d = config_.embed_dim;
  token_embedding_ =
      params_.add("tok_emb", nn::truncated_normal(vocab_.size(), d, 0.02, rng));
  position_embedding_ =
      params_.add("pos_emb", nn::truncated_normal(config_.max_context, d, 0.02, rng));
  for (int l = 0; l < config_.layers; ++l) {
    blocks_.push_back(nn::TransformerBlock::create(params_, "block" + std::to_string(l), d,
                                                   config_.heads, /*causal=*/true, rng));
  }
  final_norm_ = nn::LayerNorm::create(params_, "ln_f", d);
  output_ = nn::Linear::create(params_, "lm_head", d, vocab_.size(), rng);
}

ag::Var DecoderLM::forward(const PromptSeq& prompt, std::span<const int> tokens) const {
  const auto k = prompt.vectors.defined() ? prompt.vectors.rows() : 0;
  const auto total = k + static_cast<Eigen::Index>(tokens.size());
  if (total > config_.max_context) {
    throw LengthError("context overflow: " + std::to_string(k) + " prompt + " +
                      std::to_string(tokens.size()) + " tokens > max_context " +
                      std::to_string(config_.max_context));
  }
  if (total == 0) throw ShapeError("lm forward: empty input");
  if (k > 0 && prompt.vectors.cols() != config_.embed_dim) {
    throw ShapeError("prompt width " + std::to_string(prompt.vectors.cols()) +
                     " != LM embedding dim " + std::to_string(config_.embed_dim));
  }
  std::vector<ag::Var> parts;
  if (k > 0) parts.push_back(prompt.vectors);
  if (!tokens.empty()) parts.push_back(ag::embedding(token_embedding_, tokens));
  ag::Var x = parts.size() == 1 ? parts.front() : ag::concat_rows(parts);
  x = ag::add(x, ag::slice_rows(position_embedding_, 0, total));
  for (const auto& block : blocks_) x = block(x);
  return output_(final_norm_(x));
}

DecoderLM DecoderLM::clone() const {
  DecoderLM copy(vocab_, config_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ag::Var dst = copy.params_.items()[i].var;
    dst.mutable_value() = params_.items()[i].var.value();
  }
  copy.set_trainable(trainable());
  return copy;
}

json DecoderLM::describe(const DecoderLM& lm) {
  json j = lm.config_.to_json();
  j["vocab"] = lm.vocab_.tokens();
  j["vocab_hash"] = std::to_string(lm.vocab_.hash());
  j["backend"] = "toy";
  return j;
}

void DecoderLM::save(const std::filesystem::path& dir) const {
  archive::save(dir, "lm", params_, describe(*this));
}

DecoderLM DecoderLM::load(const std::filesystem::path& dir) {
  json cfg = archive::read_config(dir, "lm");
  DecoderLM lm(Vocab(cfg.at("vocab").get<std::vector<std::string>>()), LmConfig::from_json(cfg));
  archive::load_into(dir, "lm", lm.params_);
  return lm;
}

ag::Var lm_forward(const DecoderLM& lm, const PromptSeq& prompt, std::span<const int> tokens) {
  return lm.forward(prompt, tokens);
}

DecoderLM& set_trainable(DecoderLM& lm, bool flag) {
  lm.set_trainable(flag);
  return lm;
}

ag::Matrix softmax_rows(const ag::Matrix& logits) {
  ag::Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double mx = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

}  // namespace bpgpt::lm
