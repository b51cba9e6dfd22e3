#include "bpgpt/train.hpp"

#include "bpgpt/archive.hpp"
#include "bpgpt/error.hpp"
#include "bpgpt/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

namespace bpgpt::train {

namespace fs = std::filesystem;
using json = nlohmann::json;
using objectives::LossReport;
using objectives::TotalLoss;

const char* to_string(Stage s) { return s == Stage::baseline ? "baseline" : "decoder"; }
const char* to_string(Strategy s) {
  return s == Strategy::word_rate ? "word_rate" : "special_token";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "word_rate" || s == "wr" || s == "WR") return Strategy::word_rate;
  if (s == "special_token" || s == "spe" || s == "Spe") return Strategy::special_token;
  throw ConfigError("unknown strategy '" + s + "' (expected word_rate or special_token)");
}

void TrainConfig::validate() const {
  if (tau <= 0.0) throw ConfigError("tau must be > 0");
  if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (lr <= 0.0) throw ConfigError("lr must be > 0");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) {
    throw ConfigError("warmup_fraction must be in [0, 1]");
  }
  if (patience < 0) throw ConfigError("patience must be >= 0");
}

json TrainConfig::to_json() const {
  return {{"stage", to_string(stage)},
          {"fine_tune_lm", fine_tune_lm},
          {"strategy", to_string(strategy)},
          {"alpha", alpha},
          {"tau", tau},
          {"contrastive_form",
           contrastive_form == objectives::ContrastiveForm::literal ? "literal" : "info_nce"},
          {"pooling", pooling == objectives::SimilarityPooling::flatten ? "flatten" : "mean"},
          {"text_input", text_input == prompting::TextInput::sequence ? "sequence" : "pooled"},
          {"batch_size", batch_size},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"warmup_fraction", warmup_fraction},
          {"grad_clip", grad_clip},
          {"epochs", epochs},
          {"patience", patience},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  auto str = [&](const char* key, const std::string& def) { return j.value(key, def); };
  c.stage = str("stage", "baseline") == "decoder" ? Stage::decoder : Stage::baseline;
  c.fine_tune_lm = j.value("fine_tune_lm", c.fine_tune_lm);
  c.strategy = parse_strategy(str("strategy", "special_token"));
  c.alpha = j.value("alpha", c.alpha);
  c.tau = j.value("tau", c.tau);
  const auto form = str("contrastive_form", "literal");
  if (form != "literal" && form != "info_nce") throw ConfigError("unknown contrastive_form " + form);
  c.contrastive_form = form == "literal" ? objectives::ContrastiveForm::literal
                                         : objectives::ContrastiveForm::info_nce;
  const auto pooling = str("pooling", "flatten");
  if (pooling != "flatten" && pooling != "mean") throw ConfigError("unknown pooling " + pooling);
  c.pooling = pooling == "flatten" ? objectives::SimilarityPooling::flatten
                                   : objectives::SimilarityPooling::mean;
  const auto text_input = str("text_input", "sequence");
  if (text_input != "sequence" && text_input != "pooled") {
    throw ConfigError("unknown text_input " + text_input);
  }
  c.text_input = text_input == "sequence" ? prompting::TextInput::sequence
                                          : prompting::TextInput::pooled;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.epochs = j.value("epochs", c.epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::string target_text(const corpus::Window& window, Strategy strategy) {
  if (strategy == Strategy::special_token) return corpus::annotate_special_tokens(window);
  return corpus::join_words(window.words);
}

json TrainingLog::to_json(const StepRecord& r) {
  json j = {{"step", r.step}, {"epoch", r.epoch}};
  if (r.report.l_text) j["l_text"] = *r.report.l_text;
  if (r.report.l_brain) j["l_brain"] = *r.report.l_brain;
  if (r.report.l_contrast) j["l_contrast"] = *r.report.l_contrast;
  j["l_total"] = r.report.l_total;
  j["alpha"] = r.report.alpha;
  j["tau"] = r.report.tau;
  j["lr"] = r.lr;
  return j;
}

void TrainingLog::record(const StepRecord& r) {
  records_.push_back(r);
  if (sink_) *sink_ << to_json(r).dump() << "\n";
}

void TrainingLog::warn(const std::string& message) {
  warnings_.push_back(message);
  if (sink_) *sink_ << json{{"warning", message}}.dump() << "\n";
}

namespace {

struct Loop {
  std::size_t n = 0;
  int batch_size = 1;
  int epochs = 0;
  double lr = 1e-3;
  double warmup_fraction = 0.0;
  double grad_clip = 0.0;
  double weight_decay = 0.0;
  int patience = 0;
  std::uint64_t seed = 0;
  std::vector<ag::Var> params;
  std::function<TotalLoss(std::span<const std::size_t>)> batch_loss;
  std::function<double()> validation;  // may be empty
};

struct LoopResult {
  std::vector<EpochStats> history;
  std::string rng_state;
};

LoopResult run_loop(Loop& loop, TrainingLog* log) {
  LoopResult result;
  std::mt19937_64 rng(loop.seed);
  optim::AdamW opt(loop.params, {0.9, 0.999, 1e-8, loop.weight_decay});
  const std::size_t bs = std::size_t(loop.batch_size);
  const long steps_per_epoch = long((loop.n + bs - 1) / bs);
  const long total = steps_per_epoch * loop.epochs;
  const long warmup = std::lround(loop.warmup_fraction * double(total));

  std::vector<std::size_t> order(loop.n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<ag::Matrix> best;
  double best_val = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  long step = 0;

  for (int epoch = 0; epoch < loop.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < loop.n; start += bs) {
      std::span<const std::size_t> idx(order.data() + start, std::min(bs, loop.n - start));
      for (auto& p : loop.params) p.zero_grad();
      TotalLoss loss = loop.batch_loss(idx);
      ag::backward(loss.total);
      optim::clip_grad_norm(loop.params, loop.grad_clip);
      const double lr =
          warmup > 0 ? loop.lr * std::min(1.0, double(step + 1) / double(warmup)) : loop.lr;
      opt.step(lr);
      loss_sum += loss.report.l_total;
      if (log) log->record({step, epoch, loss.report, lr});
      if (loss.report.contrast_skipped && log) {
        log->warn("batch of size 1 at step " + std::to_string(step) + ": contrastive term skipped");
      }
      ++step;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / double(std::max<long>(steps_per_epoch, 1));
    if (loop.validation) {
      stats.validation_loss = loop.validation();
      if (*stats.validation_loss < best_val) {
        best_val = *stats.validation_loss;
        bad_epochs = 0;
        best.clear();
        for (const auto& p : loop.params) best.push_back(p.value());
      } else {
        ++bad_epochs;
      }
    }
    result.history.push_back(stats);
    if (loop.patience > 0 && loop.validation && bad_epochs >= loop.patience) break;
  }
  if (loop.patience > 0 && !best.empty()) {
    for (std::size_t i = 0; i < loop.params.size(); ++i) loop.params[i].mutable_value() = best[i];
  }
  for (auto& p : loop.params) p.zero_grad();
  std::ostringstream state;
  state << rng;
  result.rng_state = state.str();
  return result;
}

struct Targets {
  std::vector<std::size_t> kept;  // indices into the window span
  std::vector<lm::TokenSeq> tokens;
};

Targets build_targets(std::span<const corpus::Window> windows, Strategy strategy,
                      const lm::Vocab& vocab, TrainingLog* log) {
  Targets t;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    lm::TokenSeq ids = lm::tokenize(target_text(windows[i], strategy), vocab);
    if (ids.empty()) {
      if (log) log->warn("window " + windows[i].story_id + "@" + std::to_string(windows[i].start) +
                         " has no words; skipped");
      continue;
    }
    t.kept.push_back(i);
    t.tokens.push_back(std::move(ids));
  }
  return t;
}

std::vector<prompting::TextEncoderStates> encode_texts(const prompting::TextEncoder& encoder,
                                                       std::span<const corpus::Window> windows,
                                                       const std::vector<std::size_t>& kept,
                                                       Strategy strategy) {
  std::vector<prompting::TextEncoderStates> out;
  out.reserve(kept.size());
  for (std::size_t i : kept) {
    out.push_back(encoder.encode(corpus::split_words(target_text(windows[i], strategy))));
  }
  return out;
}

}  // namespace

std::vector<PromptSeq> text_prompts(const Checkpoint& baseline, std::span<const corpus::Window> windows,
                                    Strategy strategy) {
  prompting::TextEncoder encoder(baseline.text_encoder);
  ag::NoGradGuard no_grad;
  std::vector<PromptSeq> out;
  for (const auto& w : windows) {
    auto states = encoder.encode(corpus::split_words(target_text(w, strategy)));
    out.push_back(prompting::map_text_to_prompt(baseline.mapper, states, baseline.config.text_input));
  }
  return out;
}

Checkpoint train_baseline(const TrainConfig& config, std::span<const corpus::Window> corpus,
                          const lm::DecoderLM& lm, const prompting::TextEncoderConfig& text_encoder,
                          const prompting::MapperConfig& mapper_config, TrainingLog* log,
                          std::span<const corpus::Window> validation) {
  config.validate();
  if (config.stage != Stage::baseline) throw ConfigError("train_baseline needs stage = baseline");
  if (corpus.empty()) throw DataError("training corpus is empty");
  if (mapper_config.output_dim != lm.embed_dim()) {
    throw CompatibilityError("mapper output_dim " + std::to_string(mapper_config.output_dim) +
                             " != LM embed_dim " + std::to_string(lm.embed_dim()));
  }
  if (mapper_config.input_dim != text_encoder.dim) {
    throw CompatibilityError("mapper input_dim != text encoder dim");
  }

  Checkpoint ckpt{config, lm.clone(), text_encoder, prompting::PromptMapper(mapper_config),
                  std::nullopt, {}, {}};
  ckpt.lm.set_trainable(config.fine_tune_lm);
  ckpt.mapper.set_trainable(true);
  const prompting::TextEncoder encoder(text_encoder);

  Targets targets = build_targets(corpus, config.strategy, ckpt.lm.vocab(), log);
  if (targets.kept.empty()) throw DataError("no training window has a nonempty target");
  auto states = encode_texts(encoder, corpus, targets.kept, config.strategy);

  Targets val_targets = build_targets(validation, config.strategy, ckpt.lm.vocab(), nullptr);
  auto val_states = encode_texts(encoder, validation, val_targets.kept, config.strategy);

  auto loss_over = [&](const std::vector<prompting::TextEncoderStates>& st,
                       const std::vector<lm::TokenSeq>& toks, std::span<const std::size_t> idx) {
    std::vector<PromptSeq> prompts;
    std::vector<lm::TokenSeq> batch_targets;
    for (std::size_t i : idx) {
      prompts.push_back(prompting::map_text_to_prompt(ckpt.mapper, st[i], config.text_input));
      batch_targets.push_back(toks[i]);
    }
    return objectives::text_reconstruction_loss(ckpt.lm, prompts, batch_targets);
  };

  Loop loop;
  loop.n = targets.kept.size();
  loop.batch_size = config.batch_size;
  loop.epochs = config.epochs;
  loop.lr = config.lr;
  loop.warmup_fraction = config.warmup_fraction;
  loop.grad_clip = config.grad_clip;
  loop.weight_decay = config.weight_decay;
  loop.patience = config.patience;
  loop.seed = config.seed;
  loop.params = optim::trainable({&ckpt.mapper.params(), &ckpt.lm.params()});
  loop.batch_loss = [&](std::span<const std::size_t> idx) {
    TotalLoss out;
    out.total = loss_over(states, targets.tokens, idx);
    out.report.l_text = out.total.scalar();
    out.report.l_total = out.total.scalar();
    out.report.alpha = 0.0;
    out.report.tau = config.tau;
    return out;
  };
  if (!val_targets.kept.empty()) {
    loop.validation = [&] {
      ag::NoGradGuard no_grad;
      std::vector<std::size_t> all(val_targets.kept.size());
      std::iota(all.begin(), all.end(), 0);
      return loss_over(val_states, val_targets.tokens, all).scalar();
    };
  }
  LoopResult res = run_loop(loop, log);
  ckpt.history = std::move(res.history);
  ckpt.rng_state = std::move(res.rng_state);
  return ckpt;
}

Checkpoint train_decoder(const TrainConfig& config, std::span<const corpus::Window> corpus,
                         const Checkpoint& baseline, const prompting::MapperConfig& encoder_config,
                         TrainingLog* log, std::span<const corpus::Window> validation) {
  config.validate();
  if (config.stage != Stage::decoder) throw ConfigError("train_decoder needs stage = decoder");
  if (baseline.config.stage != Stage::baseline) {
    throw CompatibilityError("stage-2 training requires a stage-1 (baseline) checkpoint");
  }
  if (corpus.empty()) throw DataError("training corpus is empty");
  if (baseline.config.strategy != config.strategy) {
    throw CompatibilityError(std::string("baseline strategy ") + to_string(baseline.config.strategy) +
                             " != decoder strategy " + to_string(config.strategy));
  }
  if (encoder_config.prompt_length != baseline.mapper.config().prompt_length) {
    throw CompatibilityError("prompt length differs from baseline: " +
                             std::to_string(encoder_config.prompt_length) + " vs " +
                             std::to_string(baseline.mapper.config().prompt_length));
  }
  if (encoder_config.output_dim != baseline.lm.embed_dim()) {
    throw CompatibilityError("encoder output_dim != LM embed_dim");
  }
  const Eigen::Index voxels = corpus.front().frames.cols();
  if (encoder_config.input_dim != voxels) {
    throw CompatibilityError("encoder input_dim " + std::to_string(encoder_config.input_dim) +
                             " != ROI voxel count " + std::to_string(voxels));
  }

  Checkpoint ckpt{config, baseline.lm.clone(), baseline.text_encoder, baseline.mapper.clone(),
                  prompting::PromptMapper(encoder_config), {}, {}};
  ckpt.config.text_input = baseline.config.text_input;
  ckpt.lm.set_trainable(config.fine_tune_lm);
  ckpt.mapper.set_trainable(false);
  ckpt.encoder->set_trainable(true);

  Targets targets = build_targets(corpus, config.strategy, ckpt.lm.vocab(), log);
  if (targets.kept.empty()) throw DataError("no training window has a nonempty target");
  std::vector<corpus::Window> kept_windows;
  for (std::size_t i : targets.kept) kept_windows.push_back(corpus[i]);
  // Stationary contrastive targets from the frozen baseline mapper.
  std::vector<PromptSeq> text_targets;
  if (config.alpha != 0.0) text_targets = text_prompts(baseline, kept_windows, config.strategy);

  Targets val_targets = build_targets(validation, config.strategy, ckpt.lm.vocab(), nullptr);
  const auto options = config.contrastive();

  Loop loop;
  loop.n = targets.kept.size();
  loop.batch_size = config.batch_size;
  loop.epochs = config.epochs;
  loop.lr = config.lr;
  loop.warmup_fraction = config.warmup_fraction;
  loop.grad_clip = config.grad_clip;
  loop.weight_decay = config.weight_decay;
  loop.patience = config.patience;
  loop.seed = config.seed;
  loop.params = optim::trainable({&ckpt.encoder->params(), &ckpt.lm.params()});
  loop.batch_loss = [&](std::span<const std::size_t> idx) {
    objectives::Batch batch;
    for (std::size_t i : idx) {
      batch.prompts_brain.push_back(
          prompting::encode_fmri_to_prompt(*ckpt.encoder, kept_windows[i].frames));
      if (!text_targets.empty()) batch.prompts_text.push_back(text_targets[i]);
      batch.token_targets.push_back(targets.tokens[i]);
    }
    return objectives::total_loss(ckpt.lm, batch, config.alpha, options);
  };
  if (!val_targets.kept.empty()) {
    loop.validation = [&] {
      ag::NoGradGuard no_grad;
      std::vector<PromptSeq> prompts;
      for (std::size_t i : val_targets.kept) {
        prompts.push_back(prompting::encode_fmri_to_prompt(*ckpt.encoder, validation[i].frames));
      }
      return objectives::brain_decoding_loss(ckpt.lm, prompts, val_targets.tokens).scalar();
    };
  }
  LoopResult res = run_loop(loop, log);
  ckpt.history = std::move(res.history);
  ckpt.rng_state = std::move(res.rng_state);
  return ckpt;
}

void pretrain_lm(lm::DecoderLM& lm, std::span<const std::string> texts, const PretrainConfig& config,
                 TrainingLog* log) {
  std::vector<lm::TokenSeq> seqs;
  for (const auto& t : texts) {
    auto ids = lm::tokenize(t, lm.vocab());
    if (!ids.empty()) seqs.push_back(std::move(ids));
  }
  if (seqs.empty()) throw DataError("LM pretraining corpus is empty");
  const bool was_trainable = lm.trainable();
  lm.set_trainable(true);
  const PromptSeq bos(ag::Matrix::Zero(1, lm.embed_dim()));

  Loop loop;
  loop.n = seqs.size();
  loop.batch_size = config.batch_size;
  loop.epochs = config.epochs;
  loop.lr = config.lr;
  loop.warmup_fraction = 0.05;
  loop.grad_clip = config.grad_clip;
  loop.weight_decay = config.weight_decay;
  loop.seed = config.seed;
  loop.params = optim::trainable({&lm.params()});
  loop.batch_loss = [&](std::span<const std::size_t> idx) {
    std::vector<PromptSeq> prompts(idx.size(), bos);
    std::vector<lm::TokenSeq> batch;
    for (std::size_t i : idx) batch.push_back(seqs[i]);
    TotalLoss out;
    out.total = objectives::reconstruction_loss(lm, prompts, batch);
    out.report.l_text = out.total.scalar();
    out.report.l_total = out.total.scalar();
    return out;
  };
  run_loop(loop, log);
  lm.set_trainable(was_trainable);
}

// ---- checkpoint I/O ---------------------------------------------------------

void Checkpoint::save(const fs::path& dir) const {
  fs::create_directories(dir);
  json meta;
  meta["format"] = "bpgpt-checkpoint-v1";
  meta["train_config"] = config.to_json();
  meta["text_encoder"] = text_encoder.to_json();
  meta["rng_state"] = rng_state;
  meta["lm_fine_tuned"] = config.fine_tune_lm;
  meta["lm_checksum"] = std::to_string(lm.params().checksum());
  meta["lm_vocab_hash"] = std::to_string(lm.vocab().hash());
  json hist = json::array();
  for (const auto& h : history) {
    json e = {{"epoch", h.epoch}, {"mean_loss", h.mean_loss}};
    if (h.validation_loss) e["validation_loss"] = *h.validation_loss;
    hist.push_back(e);
  }
  meta["history"] = hist;
  std::ofstream(dir / "checkpoint.json") << meta.dump(2) << "\n";
  lm.save(dir);
  mapper.save(dir, "mapper");
  if (encoder) encoder->save(dir, "encoder");
}

Checkpoint Checkpoint::load(const fs::path& dir) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw DataError("not a checkpoint directory: " + dir.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("corrupt checkpoint.json: " + std::string(e.what()));
  }
  Checkpoint ckpt{TrainConfig::from_json(meta.at("train_config")), lm::DecoderLM::load(dir),
                  prompting::TextEncoderConfig::from_json(meta.at("text_encoder")),
                  prompting::PromptMapper::load(dir, "mapper"), std::nullopt,
                  meta.value("rng_state", std::string()), {}};
  if (archive::exists(dir, "encoder")) ckpt.encoder = prompting::PromptMapper::load(dir, "encoder");
  for (const auto& e : meta.value("history", json::array())) {
    EpochStats s;
    s.epoch = e.at("epoch").get<int>();
    s.mean_loss = e.at("mean_loss").get<double>();
    if (e.contains("validation_loss")) s.validation_loss = e["validation_loss"].get<double>();
    ckpt.history.push_back(s);
  }
  return ckpt;
}

}  // namespace bpgpt::train
