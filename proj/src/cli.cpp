#include "bpgpt/cli.hpp"

#include "bpgpt/error.hpp"
#include "bpgpt/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace bpgpt::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using pipeline::ExperimentConfig;

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw ParseError(p.string(), 1, e.what());
  }
}

}  // namespace

json RunManifest::to_json() const {
  return {{"command", command},
          {"config_hash", config_hash},
          {"inputs", inputs},
          {"outputs", outputs},
          {"seed", seed},
          {"version", version},
          {"artifact_version", artifact_version},
          {"wall_clock_seconds", wall_clock_seconds}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.inputs = j.at("inputs").get<std::vector<std::string>>();
  m.outputs = j.at("outputs").get<std::vector<std::string>>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.version = j.at("version").get<std::string>();
  m.artifact_version = j.at("artifact_version").get<std::string>();
  m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  return m;
}

void RunManifest::write(const fs::path& dir) {
  outputs.clear();
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (e.path().filename() == "manifest.json") continue;
    outputs.push_back(fs::relative(e.path(), dir).generic_string());
  }
  std::sort(outputs.begin(), outputs.end());
  std::string all;
  for (const auto& rel : outputs) {
    all += rel;
    all += '\0';
    all += content_hash(read_file(dir / rel));
  }
  artifact_version = content_hash(all);
  write_file(dir / "manifest.json", to_json().dump(2) + "\n");
}

std::string format_sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "setting\tbleu1\tmeteor\tbertscore\tshuffled_bleu1\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s\t%.6f\t%.6f\t%.6f\t%.6f\n", r.setting.c_str(), r.bleu1, r.meteor,
                  r.bertscore, r.shuffled_bleu1);
    out << buf;
  }
  return out.str();
}

std::string sweep_svg(const std::vector<SweepRow>& rows, const std::string& x_label) {
  const double w = 480, h = 320, left = 60, right = 120, top = 20, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  double xmin = 0, xmax = 1;
  if (!rows.empty()) {
    xmin = xmax = rows.front().value;
    for (const auto& r : rows) {
      xmin = std::min(xmin, r.value);
      xmax = std::max(xmax, r.value);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return top + (1.0 - std::clamp(y, 0.0, 1.0)) * ph; };

  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "font-family=\"sans-serif\" font-size=\"11\">\n",
                w, h);
  out << buf;
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf,
                "<path d=\"M%.1f %.1f V%.1f H%.1f\" stroke=\"black\" fill=\"none\"/>\n", left, top,
                top + ph, left + pw);
  out << buf;
  for (int i = 0; i <= 4; ++i) {
    const double y = i / 4.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.2f</text>\n",
                  left - 6, sy(y) + 4, y);
    out << buf;
  }
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%g</text>\n",
                  sx(r.value), top + ph + 16, r.value);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%s</text>\n",
                left + pw / 2, h - 10, x_label.c_str());
  out << buf;

  struct Series {
    const char* name;
    const char* color;
    double SweepRow::*field;
  };
  const Series series[] = {{"BLEU-1", "#1f77b4", &SweepRow::bleu1},
                           {"METEOR", "#d62728", &SweepRow::meteor},
                           {"BERTScore", "#2ca02c", &SweepRow::bertscore}};
  int idx = 0;
  for (const auto& s : series) {
    std::string d;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.1f %.1f", i == 0 ? "M" : " L", sx(rows[i].value),
                    sy(rows[i].*s.field));
      d += buf;
    }
    if (!d.empty()) {
      out << "<path d=\"" << d << "\" stroke=\"" << s.color << "\" fill=\"none\" stroke-width=\"2\"/>\n";
    }
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\" fill=\"%s\"/>\n", sx(r.value),
                    sy(r.*s.field), s.color);
      out << buf;
    }
    const double ly = top + 10 + 18 * idx++;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" stroke-width=\"2\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\">%s</text>\n",
                  left + pw + 10, ly, left + pw + 30, ly, s.color, left + pw + 35, ly + 4, s.name);
    out << buf;
  }
  out << "</svg>\n";
  return out.str();
}

namespace {

using Clock = std::chrono::steady_clock;

// Flags shared by the experiment commands. Unset flags leave the file or
// default value alone.
struct Overrides {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string strategy;
  bool fine_tune = false;
  bool frozen = false;
  double alpha = 0.0;
  double tau = 0.0;
  int prompt_length = 0;
  std::string backend;
  std::string lm_checkpoint;
  std::map<std::string, CLI::Option*> opts;

  void add(CLI::App* app) {
    opts["config"] = app->add_option("--config", config_path, "JSON config file");
    opts["seed"] = app->add_option("--seed", seed, "random seed");
    opts["strategy"] = app->add_option("--strategy", strategy, "word_rate or special_token");
    opts["fine"] = app->add_flag("--fine-tune-lm", fine_tune, "train the language model too");
    opts["frozen"] = app->add_flag("--frozen-lm", frozen, "keep the language model fixed");
    opts["alpha"] = app->add_option("--alpha", alpha, "contrastive loss weight");
    opts["tau"] = app->add_option("--tau", tau, "contrastive temperature");
    opts["k"] = app->add_option("--prompt-length", prompt_length, "prompt length k");
    opts["backend"] = app->add_option("--backend", backend, "toy or pretrained");
    opts["lm"] = app->add_option("--lm-checkpoint", lm_checkpoint, "LM directory for the pretrained backend");
  }

  bool set(const std::string& key) const { return opts.at(key)->count() > 0; }

  // CLI flag > config file > `base`.
  ExperimentConfig resolve(const json& base = json::object()) const {
    json j = base;
    if (set("config")) {
      const json file = read_json(config_path);
      if (!file.is_object()) throw ConfigError(config_path + ": config must be a JSON object");
      for (const auto& [k, v] : file.items()) j[k] = v;
    }
    if (set("seed")) j["seed"] = seed;
    if (set("strategy")) j["strategy"] = train::to_string(train::parse_strategy(strategy));
    if (set("fine") && set("frozen")) throw ConfigError("--fine-tune-lm and --frozen-lm conflict");
    if (set("fine")) j["fine_tune_lm"] = true;
    if (set("frozen")) j["fine_tune_lm"] = false;
    if (set("alpha")) j["alpha"] = alpha;
    if (set("tau")) j["tau"] = tau;
    if (set("k")) j["prompt_length"] = prompt_length;
    if (set("backend")) j["backend"] = backend;
    if (set("lm")) j["lm_checkpoint"] = lm_checkpoint;
    auto c = ExperimentConfig::from_json(j);
    c.validate();
    return c;
  }
};

struct Data {
  synth::SyntheticDataset dataset;
  pipeline::Split split;
};

Data load_data(const ExperimentConfig& c, const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("data directory not found: " + dir.string());
  Data d;
  d.dataset = synth::read_dataset(dir);
  if (d.dataset.runs.empty()) throw DataError("no stories in " + dir.string());
  const auto windows = pipeline::make_windows(d.dataset.transcripts, d.dataset.runs,
                                              {c.window_seconds, c.tr_offset});
  d.split = pipeline::split_by_story(windows, c.test_stories, c.validation_stories);
  return d;
}

void prepare_out(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create " + out.string() + ": " + ec.message());
}

void write_config(const fs::path& out, const ExperimentConfig& c) {
  write_file(out / "config.json", c.to_json().dump(2) + "\n");
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void finish(const fs::path& out, const std::string& command, const std::string& hash, std::uint64_t seed,
            std::vector<std::string> inputs, Clock::time_point t0) {
  RunManifest m;
  m.command = command;
  m.config_hash = hash;
  m.inputs = std::move(inputs);
  m.seed = seed;
  m.wall_clock_seconds = seconds_since(t0);
  m.write(out);
}

// Stage-1 fields a later stage must agree on.
void check_against(const json& saved, const ExperimentConfig& requested, const char* what) {
  static const char* keys[] = {"strategy",      "prompt_length",   "fine_tune_lm",    "lm_embed_dim",
                               "lm_layers",     "lm_heads",        "text_encoder_dim", "window_seconds",
                               "tr_offset",     "test_stories",    "validation_stories", "backend"};
  const json req = requested.to_json();
  std::string diff;
  for (const char* k : keys) {
    if (saved.contains(k) && saved.at(k) != req.at(k)) {
      diff += std::string("\n  ") + k + ": " + what + "=" + saved.at(k).dump() + " requested=" + req.at(k).dump();
    }
  }
  if (!diff.empty()) throw CompatibilityError(std::string("configuration differs from the ") + what + ":" + diff);
}

json saved_config(const fs::path& ckpt) {
  const auto p = ckpt / "config.json";
  if (!fs::exists(p)) throw DataError("missing " + p.string());
  return read_json(p);
}

void write_metrics(const fs::path& out, const pipeline::InferenceRun& run, const pipeline::Evaluation& ev) {
  eval::write_metric_report(out / "metrics.tsv", ev.report, run.window_ids);
  eval::write_metric_report(out / "shuffled_metrics.tsv", ev.shuffled, run.window_ids);
}

SweepRow row_for(const std::string& setting, double value, const pipeline::Evaluation& ev) {
  return {setting, value, ev.report.bleu1, ev.report.meteor, ev.report.bertscore, ev.shuffled.bleu1};
}

int cmd_synth(const fs::path& out, const std::string& config_path, const std::map<std::string, double>& set,
              std::ostream& err) {
  const auto t0 = Clock::now();
  json j = json::object();
  if (!config_path.empty()) j = read_json(config_path);
  synth::SynthConfig c = synth::SynthConfig::from_json(j);
  for (const auto& [k, v] : set) {
    if (k == "seed") c.seed = std::uint64_t(v);
    if (k == "n_stories") c.n_stories = int(v);
    if (k == "vocab_size") c.vocab_size = int(v);
    if (k == "n_voxels") c.n_voxels = int(v);
    if (k == "noise_sigma") c.noise_sigma = v;
    if (k == "story_seconds") c.story_seconds = v;
  }
  c.validate();
  prepare_out(out);
  synth::write_dataset(out, synth::make_synthetic_dataset(c));
  write_file(out / "synth_config.json", c.to_json().dump(2) + "\n");
  finish(out, "synth", content_hash(c.to_json().dump()), c.seed, {}, t0);
  err << "wrote " << c.n_stories << " synthetic stories to " << out.string() << "\n";
  return ok;
}

int cmd_prepare(const Overrides& o, const fs::path& data_dir, const fs::path& out, std::ostream& err) {
  const auto t0 = Clock::now();
  const auto c = o.resolve();
  const auto d = load_data(c, data_dir);
  prepare_out(out);
  std::vector<corpus::Window> all;
  json split = json::object();
  for (const auto& [name, part] : {std::pair{"train", &d.split.train}, std::pair{"validation", &d.split.validation},
                                   std::pair{"test", &d.split.test}}) {
    std::vector<std::string> ids;
    for (const auto& w : *part) ids.push_back(pipeline::window_id(w));
    split[name] = ids;
    all.insert(all.end(), part->begin(), part->end());
  }
  corpus::write_window_manifest(out / "windows.jsonl", all);
  for (auto s : {train::Strategy::special_token, train::Strategy::word_rate}) {
    std::string text;
    for (const auto& w : all) text += train::target_text(w, s) + "\n";
    write_file(out / (std::string("targets_") + train::to_string(s) + ".txt"), text);
  }
  write_file(out / "split.json", split.dump(2) + "\n");
  write_config(out, c);
  finish(out, "prepare", c.hash(), c.seed, {data_dir.string()}, t0);
  err << "prepared " << all.size() << " windows\n";
  return ok;
}

int cmd_train(const Overrides& o, const std::string& stage, const fs::path& data_dir, const fs::path& baseline_dir,
              const fs::path& out, std::ostream& err) {
  const auto t0 = Clock::now();
  if (stage == "baseline") {
    const auto c = o.resolve();
    const auto d = load_data(c, data_dir);
    prepare_out(out);
    std::ofstream log_file(out / "training_log.jsonl");
    train::TrainingLog log(&log_file);
    const auto lm = pipeline::build_lm(c, d.split, &log);
    const auto enc = c.text_encoder_config();
    auto ckpt = train::train_baseline(c.baseline_config(), d.split.train, lm, enc, c.mapper_config(enc.dim), &log,
                                      d.split.validation);
    log_file.close();
    ckpt.save(out);
    write_config(out, c);
    finish(out, "train --stage baseline", c.hash(), c.seed, {data_dir.string()}, t0);
    err << "baseline trained for " << ckpt.history.size() << " epochs\n";
    return ok;
  }
  if (stage != "decoder") throw ConfigError("--stage must be baseline or decoder");
  if (baseline_dir.empty()) throw ConfigError("--stage decoder requires --baseline");
  if (!fs::exists(baseline_dir / "checkpoint.json")) {
    throw DataError("no baseline checkpoint in " + baseline_dir.string());
  }
  const json saved = saved_config(baseline_dir);
  const auto c = o.resolve(saved);
  check_against(saved, c, "baseline");
  const auto baseline = train::Checkpoint::load(baseline_dir);
  const auto d = load_data(c, data_dir);
  prepare_out(out);
  std::ofstream log_file(out / "training_log.jsonl");
  train::TrainingLog log(&log_file);
  const int voxels = int(d.split.train.front().frames.cols());
  auto ckpt = train::train_decoder(c.decoder_config(), d.split.train, baseline, c.mapper_config(voxels), &log,
                                   d.split.validation);
  log_file.close();
  ckpt.save(out);
  const auto wr = infer::fit_word_rate_model(d.split.train, c.ridge);
  write_file(out / "word_rate.json", wr.to_json().dump(2) + "\n");
  json stats = {{"mean_words_per_tr", pipeline::mean_words_per_tr(d.split.train)}};
  write_file(out / "train_stats.json", stats.dump(2) + "\n");
  write_config(out, c);
  finish(out, "train --stage decoder", c.hash(), c.seed, {data_dir.string(), baseline_dir.string()}, t0);
  err << "decoder trained for " << ckpt.history.size() << " epochs\n";
  return ok;
}

int cmd_infer(const Overrides& o, const fs::path& data_dir, const fs::path& ckpt_dir, const std::string& source,
              const fs::path& out, std::ostream& err) {
  const auto t0 = Clock::now();
  if (source != "brain" && source != "text") throw ConfigError("--source must be brain or text");
  if (!fs::exists(ckpt_dir / "checkpoint.json")) throw DataError("no checkpoint in " + ckpt_dir.string());
  const json saved = saved_config(ckpt_dir);
  const auto c = o.resolve(saved);
  check_against(saved, c, "checkpoint");
  const auto ckpt = train::Checkpoint::load(ckpt_dir);
  const auto d = load_data(c, data_dir);
  std::optional<infer::WordRateModel> wr;
  if (fs::exists(ckpt_dir / "word_rate.json")) {
    wr = infer::WordRateModel::from_json(read_json(ckpt_dir / "word_rate.json"));
  } else if (source == "brain" && c.strategy == train::Strategy::word_rate) {
    wr = infer::fit_word_rate_model(d.split.train, c.ridge);
  }
  const auto src = source == "brain" ? pipeline::PromptSource::brain : pipeline::PromptSource::text;
  const auto run = pipeline::run_inference(c, ckpt, src, d.split.test, wr ? &*wr : nullptr,
                                           pipeline::mean_words_per_tr(d.split.train));
  prepare_out(out);
  infer::write_inference_report(out / "inference.jsonl", run.records);
  write_config(out, c);
  finish(out, "infer", c.hash(), c.seed, {data_dir.string(), ckpt_dir.string()}, t0);
  err << "generated " << run.records.size() << " windows\n";
  return ok;
}

int cmd_eval(const Overrides& o, const fs::path& report, const std::string& embedding, const fs::path& out,
             std::ostream& out_stream, std::ostream& err) {
  const auto t0 = Clock::now();
  if (!fs::exists(report)) throw DataError("inference report not found: " + report.string());
  json base = json::object();
  if (!o.set("config") && fs::exists(report.parent_path() / "config.json")) {
    base = read_json(report.parent_path() / "config.json");
  }
  const auto c = o.resolve(base);
  const auto records = infer::read_inference_report(report);
  if (records.empty()) throw DataError("empty inference report: " + report.string());
  pipeline::InferenceRun run;
  for (const auto& r : records) {
    run.candidates.push_back(eval::metric_tokens(r.generated));
    run.references.push_back(eval::metric_tokens(r.reference));
    run.window_ids.push_back(r.window_id);
  }
  std::unique_ptr<eval::EmbeddingProvider> emb;
  if (embedding == "hash") {
    emb = std::make_unique<eval::HashEmbedding>();
  } else if (embedding == "contextual") {
    emb = std::make_unique<eval::ContextualEmbedding>(
        std::make_shared<const prompting::TextEncoder>(c.text_encoder_config()));
  } else {
    throw ConfigError("--embedding must be contextual or hash");
  }
  const auto ev = pipeline::evaluate(run, *emb);
  prepare_out(out);
  write_metrics(out, run, ev);
  finish(out, "eval", c.hash(), c.seed, {report.string()}, t0);
  char buf[160];
  std::snprintf(buf, sizeof buf, "bleu1 %.4f  meteor %.4f  bertscore %.4f  (shuffled bleu1 %.4f)\n",
                ev.report.bleu1, ev.report.meteor, ev.report.bertscore, ev.shuffled.bleu1);
  out_stream << buf;
  (void)err;
  return ok;
}

int cmd_sweep(const Overrides& o, const fs::path& data_dir, const std::string& axis, const std::vector<int>& ks,
              const fs::path& out, std::ostream& out_stream, std::ostream& err) {
  const auto t0 = Clock::now();
  const auto c = o.resolve();
  const auto d = load_data(c, data_dir);
  prepare_out(out);
  const auto lm = pipeline::build_lm(c, d.split);
  std::vector<SweepRow> rows;

  auto save_setting = [&](const std::string& name, const ExperimentConfig& sc, const pipeline::InferenceRun& run,
                          const pipeline::Evaluation& ev) {
    const fs::path dir = out / name;
    prepare_out(dir);
    infer::write_inference_report(dir / "inference.jsonl", run.records);
    write_metrics(dir, run, ev);
    write_config(dir, sc);
    finish(dir, "sweep " + axis + " " + name, sc.hash(), sc.seed, {data_dir.string()}, t0);
    rows.push_back(row_for(name, 0.0, ev));
    err << name << ": meteor " << ev.report.meteor << "\n";
  };

  if (axis == "k") {
    if (ks.empty()) throw ConfigError("--values must list at least one prompt length");
    for (int k : ks) {
      ExperimentConfig sc = c;
      sc.prompt_length = k;
      const auto r = pipeline::run_experiment(sc, d.split, lm);
      save_setting("k" + std::to_string(k), sc, r.inference, r.evaluation);
      rows.back().value = k;
    }
    write_file(out / "prompt_length.svg", sweep_svg(rows, "prompt length k"));
  } else if (axis == "table1") {
    for (auto s : {train::Strategy::word_rate, train::Strategy::special_token}) {
      for (bool ft : {false, true}) {
        ExperimentConfig sc = c;
        sc.strategy = s;
        sc.fine_tune_lm = ft;
        const auto r = pipeline::run_text_to_text(sc, d.split, lm);
        const std::string name = std::string("T2T+") + (s == train::Strategy::word_rate ? "WR" : "Spe") +
                                 (ft ? "+fine-tune" : "");
        save_setting(name, sc, r.inference, r.evaluation);
      }
    }
  } else if (axis == "contrastive") {
    ExperimentConfig with = c;
    if (with.alpha == 0.0) with.alpha = 1.0;
    const auto r1 = pipeline::run_experiment(with, d.split, lm);
    ExperimentConfig without = c;
    without.alpha = 0.0;
    const auto r0 = pipeline::run_experiment(without, d.split, lm, &r1.baseline);
    save_setting("alpha0", without, r0.inference, r0.evaluation);
    save_setting("alpha" + std::to_string(with.alpha).substr(0, 3), with, r1.inference, r1.evaluation);
  } else if (axis == "strategy") {
    for (auto s : {train::Strategy::word_rate, train::Strategy::special_token}) {
      ExperimentConfig sc = c;
      sc.strategy = s;
      const auto r = pipeline::run_experiment(sc, d.split, lm);
      save_setting(s == train::Strategy::word_rate ? "WR" : "Spe", sc, r.inference, r.evaluation);
    }
  } else if (axis == "finetune") {
    for (bool ft : {false, true}) {
      ExperimentConfig sc = c;
      sc.fine_tune_lm = ft;
      const auto r = pipeline::run_experiment(sc, d.split, lm);
      save_setting(ft ? "fine-tune" : "frozen", sc, r.inference, r.evaluation);
    }
  } else {
    throw ConfigError("--axis must be one of k, table1, contrastive, strategy, finetune");
  }

  const auto table = format_sweep_table(rows);
  write_file(out / "sweep.tsv", table);
  write_config(out, c);
  finish(out, "sweep " + axis, c.hash(), c.seed, {data_dir.string()}, t0);
  out_stream << table;
  return ok;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Brain-prompted text decoding at desk scale", "bpgpt"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string out_dir, data_dir, baseline_dir, ckpt_dir, report, stage = "baseline", source = "brain";
  std::string embedding = "contextual", axis = "k", synth_config;
  std::vector<int> ks{2, 5, 10};

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset");
  synth_cmd->add_option("--out", out_dir, "output directory")->required();
  synth_cmd->add_option("--config", synth_config, "synthetic-subject JSON config");
  std::map<std::string, double> synth_set;
  std::uint64_t synth_seed = 0;
  int n_stories = 0, vocab_size = 0, n_voxels = 0;
  double noise = 0.0, story_seconds = 0.0;
  auto* s_seed = synth_cmd->add_option("--seed", synth_seed, "random seed");
  auto* s_stories = synth_cmd->add_option("--n-stories", n_stories, "number of stories");
  auto* s_vocab = synth_cmd->add_option("--vocab-size", vocab_size, "lexicon size");
  auto* s_vox = synth_cmd->add_option("--n-voxels", n_voxels, "voxels per frame");
  auto* s_noise = synth_cmd->add_option("--noise-sigma", noise, "Gaussian noise on the frames");
  auto* s_len = synth_cmd->add_option("--story-seconds", story_seconds, "story duration");

  Overrides prep_o, train_o, infer_o, eval_o, sweep_o;
  auto* prep_cmd = app.add_subcommand("prepare", "cut windows and write annotated targets");
  prep_o.add(prep_cmd);
  prep_cmd->add_option("--data", data_dir, "dataset directory")->required();
  prep_cmd->add_option("--out", out_dir, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train the baseline (stage 1) or the decoder (stage 2)");
  train_o.add(train_cmd);
  train_cmd->add_option("--stage", stage, "baseline or decoder");
  train_cmd->add_option("--data", data_dir, "dataset directory")->required();
  train_cmd->add_option("--baseline", baseline_dir, "stage-1 checkpoint (decoder stage)");
  train_cmd->add_option("--out", out_dir, "checkpoint directory")->required();

  auto* infer_cmd = app.add_subcommand("infer", "generate text for the test windows");
  infer_o.add(infer_cmd);
  infer_cmd->add_option("--data", data_dir, "dataset directory")->required();
  infer_cmd->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
  infer_cmd->add_option("--source", source, "brain or text prompts");
  infer_cmd->add_option("--out", out_dir, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "score an inference report");
  eval_o.add(eval_cmd);
  eval_cmd->add_option("--report", report, "inference.jsonl")->required();
  eval_cmd->add_option("--embedding", embedding, "contextual or hash");
  eval_cmd->add_option("--out", out_dir, "output directory")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "ablation grids and the prompt-length sweep");
  sweep_o.add(sweep_cmd);
  sweep_cmd->add_option("--data", data_dir, "dataset directory")->required();
  sweep_cmd->add_option("--axis", axis, "k, table1, contrastive, strategy or finetune");
  sweep_cmd->add_option("--values", ks, "prompt lengths for the k axis")->delimiter(',');
  sweep_cmd->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return config_error;
  }

  try {
    if (synth_cmd->parsed()) {
      if (s_seed->count()) synth_set["seed"] = double(synth_seed);
      if (s_stories->count()) synth_set["n_stories"] = n_stories;
      if (s_vocab->count()) synth_set["vocab_size"] = vocab_size;
      if (s_vox->count()) synth_set["n_voxels"] = n_voxels;
      if (s_noise->count()) synth_set["noise_sigma"] = noise;
      if (s_len->count()) synth_set["story_seconds"] = story_seconds;
      return cmd_synth(out_dir, synth_config, synth_set, err);
    }
    if (prep_cmd->parsed()) return cmd_prepare(prep_o, data_dir, out_dir, err);
    if (train_cmd->parsed()) return cmd_train(train_o, stage, data_dir, baseline_dir, out_dir, err);
    if (infer_cmd->parsed()) return cmd_infer(infer_o, data_dir, ckpt_dir, source, out_dir, err);
    if (eval_cmd->parsed()) return cmd_eval(eval_o, report, embedding, out_dir, out, err);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_o, data_dir, axis, ks, out_dir, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return config_error;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return data_error;
  } catch (const json::exception& e) {
    err << "config error: " << e.what() << "\n";
    return config_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return failure;
  }
  return failure;
}

}  // namespace bpgpt::cli
