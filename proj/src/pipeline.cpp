#include "bpgpt/pipeline.hpp"

#include "bpgpt/error.hpp"
#include "bpgpt/objectives.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace bpgpt::pipeline {

using json = nlohmann::json;

Backend parse_backend(const std::string& s) {
  if (s == "toy") return Backend::toy;
  if (s == "pretrained") return Backend::pretrained;
  throw ConfigError("unknown backend '" + s + "' (expected toy or pretrained)");
}

const char* to_string(Backend b) { return b == Backend::toy ? "toy" : "pretrained"; }

void ExperimentConfig::validate() const {
  if (prompt_length < 1) throw ConfigError("prompt_length must be >= 1");
  if (tau <= 0.0) throw ConfigError("tau must be > 0");
  if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
  if (window_seconds <= 0.0) throw ConfigError("window_seconds must be > 0");
  if (tr_offset < 0) throw ConfigError("tr_offset must be >= 0");
  if (test_stories < 1) throw ConfigError("test_stories must be >= 1");
  if (validation_stories < 0) throw ConfigError("validation_stories must be >= 0");
  if (lm_embed_dim < 1 || lm_layers < 0 || lm_heads < 1 || lm_embed_dim % lm_heads != 0) {
    throw ConfigError("lm_embed_dim must be a positive multiple of lm_heads");
  }
  if (mapper_width < 1 || mapper_layers < 0 || mapper_heads < 1 || mapper_width % mapper_heads != 0) {
    throw ConfigError("mapper_width must be a positive multiple of mapper_heads");
  }
  if (text_encoder_dim < 4 || text_encoder_dim % 4 != 0) {
    throw ConfigError("text_encoder_dim must be a positive multiple of 4");
  }
  if (pretrain_epochs < 0) throw ConfigError("pretrain_epochs must be >= 0");
  if (baseline_epochs < 0 || decoder_epochs < 0) throw ConfigError("epochs must be >= 0");
  if (ridge < 0.0) throw ConfigError("ridge must be >= 0");
  if (backend == Backend::pretrained && lm_checkpoint.empty()) {
    throw ConfigError("backend 'pretrained' needs lm_checkpoint");
  }
  baseline_config().validate();
}

json ExperimentConfig::to_json() const {
  return {{"seed", seed},
          {"strategy", train::to_string(strategy)},
          {"fine_tune_lm", fine_tune_lm},
          {"alpha", alpha},
          {"tau", tau},
          {"prompt_length", prompt_length},
          {"backend", to_string(backend)},
          {"lm_checkpoint", lm_checkpoint},
          {"window_seconds", window_seconds},
          {"tr_offset", tr_offset},
          {"test_stories", test_stories},
          {"validation_stories", validation_stories},
          {"lm_embed_dim", lm_embed_dim},
          {"lm_layers", lm_layers},
          {"lm_heads", lm_heads},
          {"lm_max_context", lm_max_context},
          {"pretrain_epochs", pretrain_epochs},
          {"pretrain_lr", pretrain_lr},
          {"text_encoder_dim", text_encoder_dim},
          {"mapper_width", mapper_width},
          {"mapper_layers", mapper_layers},
          {"mapper_heads", mapper_heads},
          {"contrastive_form", contrastive_form},
          {"pooling", pooling},
          {"text_input", text_input},
          {"batch_size", batch_size},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"warmup_fraction", warmup_fraction},
          {"grad_clip", grad_clip},
          {"baseline_epochs", baseline_epochs},
          {"decoder_epochs", decoder_epochs},
          {"patience", patience},
          {"ridge", ridge},
          {"temperature", temperature},
          {"top_k", top_k}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  const json defaults = ExperimentConfig{}.to_json();
  json merged = defaults;
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    merged[key] = value;
  }
  ExperimentConfig c;
  try {
    c.seed = merged["seed"].get<std::uint64_t>();
    c.strategy = train::parse_strategy(merged["strategy"].get<std::string>());
    c.fine_tune_lm = merged["fine_tune_lm"].get<bool>();
    c.alpha = merged["alpha"].get<double>();
    c.tau = merged["tau"].get<double>();
    c.prompt_length = merged["prompt_length"].get<int>();
    c.backend = parse_backend(merged["backend"].get<std::string>());
    c.lm_checkpoint = merged["lm_checkpoint"].get<std::string>();
    c.window_seconds = merged["window_seconds"].get<double>();
    c.tr_offset = merged["tr_offset"].get<int>();
    c.test_stories = merged["test_stories"].get<int>();
    c.validation_stories = merged["validation_stories"].get<int>();
    c.lm_embed_dim = merged["lm_embed_dim"].get<int>();
    c.lm_layers = merged["lm_layers"].get<int>();
    c.lm_heads = merged["lm_heads"].get<int>();
    c.lm_max_context = merged["lm_max_context"].get<int>();
    c.pretrain_epochs = merged["pretrain_epochs"].get<int>();
    c.pretrain_lr = merged["pretrain_lr"].get<double>();
    c.text_encoder_dim = merged["text_encoder_dim"].get<int>();
    c.mapper_width = merged["mapper_width"].get<int>();
    c.mapper_layers = merged["mapper_layers"].get<int>();
    c.mapper_heads = merged["mapper_heads"].get<int>();
    c.contrastive_form = merged["contrastive_form"].get<std::string>();
    c.pooling = merged["pooling"].get<std::string>();
    c.text_input = merged["text_input"].get<std::string>();
    c.batch_size = merged["batch_size"].get<int>();
    c.lr = merged["lr"].get<double>();
    c.weight_decay = merged["weight_decay"].get<double>();
    c.warmup_fraction = merged["warmup_fraction"].get<double>();
    c.grad_clip = merged["grad_clip"].get<double>();
    c.baseline_epochs = merged["baseline_epochs"].get<int>();
    c.decoder_epochs = merged["decoder_epochs"].get<int>();
    c.patience = merged["patience"].get<int>();
    c.ridge = merged["ridge"].get<double>();
    c.temperature = merged["temperature"].get<double>();
    c.top_k = merged["top_k"].get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

train::TrainConfig ExperimentConfig::baseline_config() const {
  json j = {{"stage", "baseline"},
            {"fine_tune_lm", fine_tune_lm},
            {"strategy", train::to_string(strategy)},
            {"alpha", alpha},
            {"tau", tau},
            {"contrastive_form", contrastive_form},
            {"pooling", pooling},
            {"text_input", text_input},
            {"batch_size", batch_size},
            {"lr", lr},
            {"weight_decay", weight_decay},
            {"warmup_fraction", warmup_fraction},
            {"grad_clip", grad_clip},
            {"epochs", baseline_epochs},
            {"patience", patience},
            {"seed", seed}};
  return train::TrainConfig::from_json(j);
}

train::TrainConfig ExperimentConfig::decoder_config() const {
  train::TrainConfig c = baseline_config();
  c.stage = train::Stage::decoder;
  c.epochs = decoder_epochs;
  c.seed = seed + 1;
  return c;
}

lm::LmConfig ExperimentConfig::lm_config() const {
  lm::LmConfig c;
  c.embed_dim = lm_embed_dim;
  c.layers = lm_layers;
  c.heads = lm_heads;
  c.max_context = lm_max_context;
  c.seed = seed;
  return c;
}

prompting::TextEncoderConfig ExperimentConfig::text_encoder_config() const {
  prompting::TextEncoderConfig c;
  c.dim = text_encoder_dim;
  return c;
}

prompting::MapperConfig ExperimentConfig::mapper_config(int input_dim) const {
  prompting::MapperConfig c;
  c.input_dim = input_dim;
  c.width = mapper_width;
  c.layers = mapper_layers;
  c.heads = mapper_heads;
  c.prompt_length = prompt_length;
  c.output_dim = lm_embed_dim;
  c.seed = seed + std::uint64_t(input_dim);
  return c;
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : to_json().dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<corpus::Window> make_windows(const std::vector<corpus::StimulusTranscript>& transcripts,
                                         const std::vector<corpus::FmriRun>& runs,
                                         const corpus::WindowOptions& options) {
  std::vector<corpus::Window> out;
  for (const auto& run : runs) {
    auto it = std::find_if(transcripts.begin(), transcripts.end(),
                           [&](const auto& t) { return t.story_id == run.story_id; });
    if (it == transcripts.end()) throw DataError("no transcript for story " + run.story_id);
    auto windows = corpus::window_run(run, *it, options);
    out.insert(out.end(), std::make_move_iterator(windows.begin()),
               std::make_move_iterator(windows.end()));
  }
  return out;
}

Split split_by_story(const std::vector<corpus::Window>& windows, int test_stories,
                     int validation_stories) {
  std::vector<std::string> stories;
  for (const auto& w : windows) {
    if (std::find(stories.begin(), stories.end(), w.story_id) == stories.end()) {
      stories.push_back(w.story_id);
    }
  }
  const int n = int(stories.size());
  if (test_stories + validation_stories >= n) {
    throw DataError("need more than " + std::to_string(test_stories + validation_stories) +
                    " stories to split, have " + std::to_string(n));
  }
  const std::set<std::string> test(stories.end() - test_stories, stories.end());
  const std::set<std::string> val(stories.end() - test_stories - validation_stories,
                                  stories.end() - test_stories);
  Split split;
  for (const auto& w : windows) {
    if (test.contains(w.story_id)) {
      split.test.push_back(w);
    } else if (val.contains(w.story_id)) {
      split.validation.push_back(w);
    } else {
      split.train.push_back(w);
    }
  }
  return split;
}

lm::Vocab vocab_for(const std::vector<corpus::Window>& windows) {
  std::vector<std::string> words;
  for (const auto& w : windows) words.insert(words.end(), w.words.begin(), w.words.end());
  return lm::Vocab::from_words(words);
}

std::vector<std::string> lm_corpus(const std::vector<corpus::Window>& windows) {
  std::vector<std::string> texts;
  for (const auto& w : windows) {
    if (w.words.empty()) continue;
    texts.push_back(train::target_text(w, train::Strategy::word_rate));
    texts.push_back(train::target_text(w, train::Strategy::special_token));
  }
  return texts;
}

lm::DecoderLM build_lm(const ExperimentConfig& config, const Split& split, train::TrainingLog* log) {
  if (config.backend == Backend::pretrained) {
    lm::DecoderLM lm = lm::DecoderLM::load(config.lm_checkpoint);
    for (const auto* part : {&split.train, &split.validation, &split.test}) {
      for (const auto& w : *part) {
        for (const auto& word : w.words) {
          if (!lm.vocab().contains(word)) {
            throw CompatibilityError("pretrained LM vocabulary lacks corpus word '" + word + "'");
          }
        }
      }
    }
    return lm;
  }
  std::vector<corpus::Window> all = split.train;
  all.insert(all.end(), split.validation.begin(), split.validation.end());
  all.insert(all.end(), split.test.begin(), split.test.end());
  lm::DecoderLM lm(vocab_for(all), config.lm_config());
  if (config.pretrain_epochs > 0) {
    train::PretrainConfig pc;
    pc.epochs = config.pretrain_epochs;
    pc.lr = config.pretrain_lr;
    pc.seed = config.seed;
    const auto texts = lm_corpus(split.train);
    train::pretrain_lm(lm, texts, pc, log);
  }
  return lm;
}

double mean_words_per_tr(const std::vector<corpus::Window>& windows) {
  double words = 0.0;
  double trs = 0.0;
  for (const auto& w : windows) {
    words += double(w.words.size());
    trs += double(w.n_tr());
  }
  return trs > 0.0 ? words / trs : 0.0;
}

std::string window_id(const corpus::Window& w) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", w.start);
  return w.story_id + "@" + buf;
}

InferenceRun run_inference(const ExperimentConfig& config, const train::Checkpoint& checkpoint,
                           PromptSource source, const std::vector<corpus::Window>& windows,
                           const infer::WordRateModel* word_rate, double mean_wpt) {
  if (source == PromptSource::brain && !checkpoint.encoder) {
    throw CompatibilityError("brain-prompted inference needs a stage-2 checkpoint");
  }
  const auto strategy = checkpoint.config.strategy;
  if (strategy == train::Strategy::word_rate && source == PromptSource::brain && !word_rate) {
    throw ConfigError("word-rate inference needs a word rate model");
  }
  std::vector<PromptSeq> prompts;
  if (source == PromptSource::text) {
    prompts = train::text_prompts(checkpoint, windows, strategy);
  } else {
    ag::NoGradGuard no_grad;
    for (const auto& w : windows) {
      prompts.push_back(prompting::encode_fmri_to_prompt(*checkpoint.encoder, w.frames));
    }
  }
  InferenceRun run;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    infer::DecodeOptions opt;
    opt.temperature = config.temperature;
    opt.top_k = config.top_k;
    opt.seed = config.seed * 1000003ULL + i;
    infer::InferenceRecord rec;
    rec.window_id = window_id(w);
    rec.strategy = train::to_string(strategy);
    rec.actual_words = int(w.words.size());
    infer::GenerationResult gen;
    if (strategy == train::Strategy::special_token) {
      gen = infer::generate_special_token(checkpoint.lm, prompts[i], int(w.n_tr()),
                                          infer::special_token_cap(int(w.n_tr()), mean_wpt), opt);
      rec.predicted_words = -1;
    } else {
      const int budget = source == PromptSource::text
                             ? int(w.words.size())
                             : infer::predict_word_count(*word_rate, w.frames);
      gen = infer::generate_word_rate(checkpoint.lm, prompts[i], budget, infer::word_rate_cap(budget),
                                      opt);
      rec.predicted_words = budget;
    }
    rec.stop_reason = gen.stop_reason;
    rec.generated = gen.surface_text;
    rec.reference = corpus::join_words(w.words);
    run.candidates.push_back(eval::metric_tokens(rec.generated));
    run.references.push_back(w.words);
    run.window_ids.push_back(rec.window_id);
    run.records.push_back(std::move(rec));
  }
  return run;
}

std::unique_ptr<eval::EmbeddingProvider> embedding_for(const train::Checkpoint& checkpoint) {
  return std::make_unique<eval::ContextualEmbedding>(
      std::make_shared<const prompting::TextEncoder>(checkpoint.text_encoder));
}

std::vector<std::size_t> shuffled_pairing(std::size_t n) {
  std::vector<std::size_t> out(n);
  const std::size_t shift = std::max<std::size_t>(1, n / 2);
  for (std::size_t i = 0; i < n; ++i) out[i] = (i + shift) % n;
  return out;
}

Evaluation evaluate(const InferenceRun& run, const eval::EmbeddingProvider& emb) {
  Evaluation ev;
  ev.report = eval::evaluate_story(run.candidates, run.references, emb);
  const auto perm = shuffled_pairing(run.references.size());
  std::vector<eval::Words> mismatched;
  for (std::size_t j : perm) mismatched.push_back(run.references[j]);
  ev.shuffled = eval::evaluate_story(run.candidates, mismatched, emb);
  return ev;
}

double prompt_alignment(const train::Checkpoint& decoder, const train::Checkpoint& baseline,
                        const std::vector<corpus::Window>& windows) {
  if (!decoder.encoder) throw CompatibilityError("alignment needs a stage-2 checkpoint");
  if (windows.empty()) return 0.0;
  const auto text = train::text_prompts(baseline, windows, baseline.config.strategy);
  ag::NoGradGuard no_grad;
  double sum = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const PromptSeq brain = prompting::encode_fmri_to_prompt(*decoder.encoder, windows[i].frames);
    sum += objectives::prompt_cosine(brain, text[i]);
  }
  return sum / double(windows.size());
}

ExperimentResult run_experiment(const ExperimentConfig& config, const Split& split,
                                const lm::DecoderLM& lm, const train::Checkpoint* baseline,
                                train::TrainingLog* log) {
  config.validate();
  if (split.train.empty()) throw DataError("no training windows");
  const auto enc_cfg = config.text_encoder_config();
  std::optional<train::Checkpoint> own;
  if (!baseline) {
    own = train::train_baseline(config.baseline_config(), split.train, lm, enc_cfg,
                                config.mapper_config(enc_cfg.dim), log, split.validation);
    baseline = &*own;
  }
  const int voxels = int(split.train.front().frames.cols());
  train::Checkpoint decoder = train::train_decoder(config.decoder_config(), split.train, *baseline,
                                                   config.mapper_config(voxels), log, split.validation);
  infer::WordRateModel wr = infer::fit_word_rate_model(split.train, config.ridge);
  InferenceRun inference = run_inference(config, decoder, PromptSource::brain, split.test, &wr,
                                         mean_words_per_tr(split.train));
  const auto emb = embedding_for(decoder);
  Evaluation evaluation = evaluate(inference, *emb);
  const double alignment = prompt_alignment(decoder, *baseline, split.test);
  train::Checkpoint base_copy = own ? std::move(*own)
                                    : train::Checkpoint{baseline->config,
                                                        baseline->lm.clone(),
                                                        baseline->text_encoder,
                                                        baseline->mapper.clone(),
                                                        std::nullopt,
                                                        baseline->rng_state,
                                                        baseline->history};
  return ExperimentResult{std::move(base_copy), std::move(decoder), std::move(wr),
                          std::move(inference), std::move(evaluation), alignment};
}

TextToTextResult run_text_to_text(const ExperimentConfig& config, const Split& split,
                                  const lm::DecoderLM& lm, train::TrainingLog* log,
                                  const std::vector<corpus::Window>* windows) {
  config.validate();
  if (split.train.empty()) throw DataError("no training windows");
  const auto enc_cfg = config.text_encoder_config();
  train::Checkpoint baseline = train::train_baseline(config.baseline_config(), split.train, lm, enc_cfg,
                                                     config.mapper_config(enc_cfg.dim), log, split.validation);
  const auto& scored = windows ? *windows : split.test;
  InferenceRun inference =
      run_inference(config, baseline, PromptSource::text, scored, nullptr, mean_words_per_tr(split.train));
  const auto emb = embedding_for(baseline);
  Evaluation evaluation = evaluate(inference, *emb);
  return TextToTextResult{std::move(baseline), std::move(inference), std::move(evaluation)};
}

}  // namespace bpgpt::pipeline
