#include "bpgpt/prompting.hpp"

#include "bpgpt/archive.hpp"
#include "bpgpt/error.hpp"

#include <cmath>

namespace bpgpt::prompting {

using json = nlohmann::json;

json TextEncoderConfig::to_json() const {
  return {{"dim", dim}, {"layers", layers}, {"heads", heads}, {"max_length", max_length},
          {"seed", seed}};
}

TextEncoderConfig TextEncoderConfig::from_json(const json& j) {
  TextEncoderConfig c;
  c.dim = j.value("dim", c.dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.max_length = j.value("max_length", c.max_length);
  c.seed = j.value("seed", c.seed);
  return c;
}

TextEncoder::TextEncoder(TextEncoderConfig config) : config_(config) {
  nn::Rng rng(config_.seed);
  for (int l = 0; l < config_.layers; ++l) {
    blocks_.push_back(nn::TransformerBlock::create(params_, "block" + std::to_string(l),
                                                   config_.dim, config_.heads, false, rng));
  }
  final_norm_ = nn::LayerNorm::create(params_, "ln_f", config_.dim);
  params_.set_trainable(false);
}

ag::Matrix TextEncoder::word_vector(const std::string& word) const {
  std::uint64_t h = 1469598103934665603ULL ^ config_.seed;
  for (unsigned char c : word) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  nn::Rng rng(h);
  std::normal_distribution<double> dist(0.0, 1.0);
  ag::Matrix v(1, config_.dim);
  for (Eigen::Index i = 0; i < v.cols(); ++i) v(0, i) = dist(rng);
  return v;
}

TextEncoderStates TextEncoder::encode(const std::vector<std::string>& words) const {
  const auto n = static_cast<Eigen::Index>(words.size()) + 1;
  if (n > config_.max_length) throw LengthError("text encoder input too long");
  ag::Matrix x(n, config_.dim);
  x.row(0) = word_vector("[CLS]");
  for (std::size_t i = 0; i < words.size(); ++i) x.row(Eigen::Index(i) + 1) = word_vector(words[i]);
  // Sinusoidal positions, half amplitude so word identity dominates.
  for (Eigen::Index p = 0; p < n; ++p) {
    for (Eigen::Index i = 0; i < config_.dim; ++i) {
      double freq = std::pow(10000.0, -double(i / 2 * 2) / config_.dim);
      x(p, i) += 0.5 * (i % 2 == 0 ? std::sin(double(p) * freq) : std::cos(double(p) * freq));
    }
  }
  ag::NoGradGuard no_grad;
  ag::Var h(std::move(x));
  for (const auto& block : blocks_) h = block(h);
  TextEncoderStates out;
  out.states = final_norm_(h).value();
  out.mask.assign(std::size_t(n), true);
  return out;
}

MapperConfig MapperConfig::full_scale(int input_dim, int output_dim) {
  MapperConfig c;
  c.input_dim = input_dim;
  c.output_dim = output_dim;
  return c;
}

json MapperConfig::to_json() const {
  return {{"input_dim", input_dim},       {"width", width},
          {"layers", layers},             {"heads", heads},
          {"prompt_length", prompt_length}, {"output_dim", output_dim},
          {"max_input_length", max_input_length}, {"seed", seed}};
}

MapperConfig MapperConfig::from_json(const json& j) {
  MapperConfig c;
  c.input_dim = j.at("input_dim").get<int>();
  c.width = j.at("width").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.prompt_length = j.at("prompt_length").get<int>();
  c.output_dim = j.at("output_dim").get<int>();
  c.max_input_length = j.value("max_input_length", c.max_input_length);
  c.seed = j.value("seed", c.seed);
  return c;
}

PromptMapper::PromptMapper(MapperConfig config) : config_(config) {
  if (config_.prompt_length < 1) throw ConfigError("prompt length must be >= 1");
  if (config_.input_dim < 1 || config_.output_dim < 1 || config_.width < 1) {
    throw ConfigError("mapper dimensions must be positive");
  }
  nn::Rng rng(config_.seed);
  input_proj_ = nn::Linear::create(params_, "input_proj", config_.input_dim, config_.width, rng);
  queries_ = params_.add("queries",
                         nn::truncated_normal(config_.prompt_length, config_.width, 0.02, rng));
  positions_ = params_.add(
      "positions", nn::truncated_normal(config_.prompt_length + config_.max_input_length,
                                        config_.width, 0.02, rng));
  for (int l = 0; l < config_.layers; ++l) {
    trunk_.push_back(nn::TransformerBlock::create(params_, "block" + std::to_string(l),
                                                  config_.width, config_.heads, false, rng));
  }
  final_norm_ = nn::LayerNorm::create(params_, "ln_f", config_.width);
  output_proj_ =
      nn::Linear::create(params_, "output_proj", config_.width, config_.output_dim, rng);
}

PromptSeq PromptMapper::map(const ag::Var& input) const {
  if (input.cols() != config_.input_dim) {
    throw ShapeError("mapper input width " + std::to_string(input.cols()) + " != " +
                     std::to_string(config_.input_dim));
  }
  if (input.rows() > config_.max_input_length) {
    throw LengthError("mapper input has " + std::to_string(input.rows()) + " rows, max " +
                      std::to_string(config_.max_input_length));
  }
  const Eigen::Index k = config_.prompt_length;
  ag::Var x = queries_;
  if (input.rows() > 0) {
    std::vector<ag::Var> parts = {queries_, input_proj_(input)};
    x = ag::concat_rows(parts);
  }
  x = ag::add(x, ag::slice_rows(positions_, 0, x.rows()));
  for (const auto& block : trunk_) x = block(x);
  x = ag::slice_rows(final_norm_(x), 0, k);
  return PromptSeq(output_proj_(x));
}

PromptMapper PromptMapper::clone() const {
  PromptMapper copy(config_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ag::Var dst = copy.params_.items()[i].var;
    dst.mutable_value() = params_.items()[i].var.value();
  }
  copy.set_trainable(params_.trainable());
  return copy;
}

void PromptMapper::save(const std::filesystem::path& dir, const std::string& name) const {
  archive::save(dir, name, params_, config_.to_json());
}

PromptMapper PromptMapper::load(const std::filesystem::path& dir, const std::string& name) {
  PromptMapper m(MapperConfig::from_json(archive::read_config(dir, name)));
  archive::load_into(dir, name, m.params_);
  return m;
}

PromptSeq map_text_to_prompt(const PromptMapper& mapper, const TextEncoderStates& states,
                             TextInput mode) {
  if (states.states.rows() == 0) throw ShapeError("text encoder states are empty");
  if (!states.mask.empty() && Eigen::Index(states.mask.size()) != states.states.rows()) {
    throw ShapeError("text mask length != state rows");
  }
  Eigen::Index kept = 0;
  Matrix rows(states.states.rows(), states.states.cols());
  for (Eigen::Index r = 0; r < states.states.rows(); ++r) {
    if (states.mask.empty() || states.mask[std::size_t(r)]) rows.row(kept++) = states.states.row(r);
  }
  rows.conservativeResize(kept, Eigen::NoChange);
  if (kept == 0) throw ShapeError("every text state is masked");
  if (mode == TextInput::pooled) rows = Matrix(rows.colwise().mean());
  // The text encoder is frozen: its states enter as constants.
  return mapper.map(ag::constant(std::move(rows)));
}

PromptSeq encode_fmri_to_prompt(const PromptMapper& encoder, const Matrix& frames) {
  if (frames.cols() != encoder.config().input_dim) {
    throw ShapeError("fMRI window has " + std::to_string(frames.cols()) +
                     " voxels, encoder expects " + std::to_string(encoder.config().input_dim));
  }
  if (frames.rows() < 1) throw ShapeError("fMRI window has no frames");
  return encoder.map(ag::constant(frames));
}

}  // namespace bpgpt::prompting
