#include "avsynth/config.hpp"

#include <cstdlib>
#include <fstream>

#include "avsynth/error.hpp"
#include "avsynth/rng.hpp"

namespace avsynth {
namespace {

nlohmann::json unet_json(const UNetConfig& c) {
  return {{"depth", c.depth}, {"base_width", c.base_width}, {"max_width", c.max_width}};
}

void read_unet(const nlohmann::json& j, UNetConfig& c) {
  c.depth = j.value("depth", c.depth);
  c.base_width = j.value("base_width", c.base_width);
  c.max_width = j.value("max_width", c.max_width);
}

}  // namespace

SeqPix2PixConfig PipelineConfig::default_s2p(int image_size, int memory) {
  SeqPix2PixConfig c;
  c.image_size = image_size;
  c.memory = memory;
  c.generator = {3, 3, 7, 64, 512};
  c.predictor = {3 * memory, 3, 7, 64, 512};
  c.discriminator = {64, 512};
  return c;
}

void PipelineConfig::propagate() {
  features.frame_rate = frame_rate;
  vae.image_size = image_size;
  blstm.input_dim = features.n_mels;
  blstm.output_dim = vae.latent_dim;
  s2p.image_size = image_size;
  s2p.memory = memory;
  s2p.generator.in_channels = 3;
  s2p.generator.out_channels = 3;
  s2p.predictor.in_channels = 3 * memory;
  s2p.predictor.out_channels = 3;
  s2p_train.weights.memory = memory;
  vae_train.seed = derive_seed(seed, 101);
  blstm_train.seed = derive_seed(seed, 102);
  s2p_train.seed = derive_seed(seed, 103);
}

void PipelineConfig::validate() const {
  if (frame_rate <= 0) throw ConfigError("config: frame rate must be positive");
  if (window < 1) throw ConfigError("config: look-back window must be >= 1");
  if (memory < 1) throw ConfigError("config: memory length must be >= 1");
  features.validate();
  vae.validate();
  blstm.validate();
  s2p.validate();
  s2p_train.weights.validate();
  if (features.frame_rate != frame_rate) throw ConfigError("config: feature frame rate differs from video frame rate");
  if (vae.image_size != image_size || s2p.image_size != image_size) throw ConfigError("config: image sizes disagree");
  if (blstm.output_dim != vae.latent_dim) throw ConfigError("config: BLSTM output must equal the VAE latent dimension");
  if (blstm.input_dim != features.n_mels) throw ConfigError("config: BLSTM input must equal the mel band count");
  if (s2p.memory != memory || s2p_train.weights.memory != memory) throw ConfigError("config: memory lengths disagree");
  for (double lr : {vae_train.lr, blstm_train.lr, s2p_train.lr}) {
    if (lr < 0.0) throw ConfigError("config: learning rates must be non-negative");
  }
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json j;
  j["frame_rate"] = frame_rate;
  j["image_size"] = image_size;
  j["window"] = window;
  j["memory"] = memory;
  j["perceptual"] = perceptual;
  j["seed"] = seed;
  j["parallel_stage2"] = parallel_stage2;
  j["features"] = {{"sample_rate", features.sample_rate},
                   {"n_mels", features.n_mels},
                   {"fft_size", features.fft_size},
                   {"window_seconds", features.window_seconds},
                   {"log_floor", features.log_floor}};
  j["vae"] = {{"latent_dim", vae.latent_dim},
              {"encoder_channels", vae.encoder_channels},
              {"decoder_channels", vae.decoder_channels},
              {"lr", vae_train.lr},
              {"kl_weight", vae_train.kl_weight},
              {"rmsprop_alpha", vae_train.rmsprop_alpha},
              {"rmsprop_eps", vae_train.rmsprop_eps},
              {"steps", vae_train.steps},
              {"batch_size", vae_train.batch_size}};
  j["blstm"] = {{"hidden", blstm.hidden},
                {"lr", blstm_train.lr},
                {"rmsprop_alpha", blstm_train.rmsprop_alpha},
                {"rmsprop_eps", blstm_train.rmsprop_eps},
                {"steps", blstm_train.steps},
                {"batch_size", blstm_train.batch_size}};
  j["seqpix2pix"] = {{"generator", unet_json(s2p.generator)},
                     {"predictor", unet_json(s2p.predictor)},
                     {"discriminator", s2p.discriminator.to_json()},
                     {"lambda0", s2p_train.weights.structural},
                     {"lambda1", s2p_train.weights.temporal_generated},
                     {"lambda2", s2p_train.weights.temporal_real},
                     {"lr", s2p_train.lr},
                     {"beta1", s2p_train.beta1},
                     {"beta2", s2p_train.beta2},
                     {"steps", s2p_train.steps},
                     {"batch_size", s2p_train.batch_size},
                     {"start_stride", s2p_train.start_stride}};
  return j;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const PipelineConfig& base) {
  PipelineConfig c = base;
  try {
    c.frame_rate = j.value("frame_rate", c.frame_rate);
    c.image_size = j.value("image_size", c.image_size);
    c.window = j.value("window", c.window);
    c.memory = j.value("memory", c.memory);
    c.perceptual = j.value("perceptual", c.perceptual);
    c.seed = j.value("seed", c.seed);
    c.parallel_stage2 = j.value("parallel_stage2", c.parallel_stage2);
    if (j.contains("features")) {
      const auto& f = j["features"];
      c.features.sample_rate = f.value("sample_rate", c.features.sample_rate);
      c.features.n_mels = f.value("n_mels", c.features.n_mels);
      c.features.fft_size = f.value("fft_size", c.features.fft_size);
      c.features.window_seconds = f.value("window_seconds", c.features.window_seconds);
      c.features.log_floor = f.value("log_floor", c.features.log_floor);
    }
    if (j.contains("vae")) {
      const auto& v = j["vae"];
      c.vae.latent_dim = v.value("latent_dim", c.vae.latent_dim);
      c.vae.encoder_channels = v.value("encoder_channels", c.vae.encoder_channels);
      c.vae.decoder_channels = v.value("decoder_channels", c.vae.decoder_channels);
      c.vae_train.lr = v.value("lr", c.vae_train.lr);
      c.vae_train.kl_weight = v.value("kl_weight", c.vae_train.kl_weight);
      c.vae_train.rmsprop_alpha = v.value("rmsprop_alpha", c.vae_train.rmsprop_alpha);
      c.vae_train.rmsprop_eps = v.value("rmsprop_eps", c.vae_train.rmsprop_eps);
      c.vae_train.steps = v.value("steps", c.vae_train.steps);
      c.vae_train.batch_size = v.value("batch_size", c.vae_train.batch_size);
    }
    if (j.contains("blstm")) {
      const auto& b = j["blstm"];
      c.blstm.hidden = b.value("hidden", c.blstm.hidden);
      c.blstm_train.lr = b.value("lr", c.blstm_train.lr);
      c.blstm_train.rmsprop_alpha = b.value("rmsprop_alpha", c.blstm_train.rmsprop_alpha);
      c.blstm_train.rmsprop_eps = b.value("rmsprop_eps", c.blstm_train.rmsprop_eps);
      c.blstm_train.steps = b.value("steps", c.blstm_train.steps);
      c.blstm_train.batch_size = b.value("batch_size", c.blstm_train.batch_size);
    }
    if (j.contains("seqpix2pix")) {
      const auto& s = j["seqpix2pix"];
      if (s.contains("generator")) read_unet(s["generator"], c.s2p.generator);
      if (s.contains("predictor")) read_unet(s["predictor"], c.s2p.predictor);
      if (s.contains("discriminator")) {
        c.s2p.discriminator.base_width = s["discriminator"].value("base_width", c.s2p.discriminator.base_width);
        c.s2p.discriminator.max_width = s["discriminator"].value("max_width", c.s2p.discriminator.max_width);
      }
      c.s2p_train.weights.structural = s.value("lambda0", c.s2p_train.weights.structural);
      c.s2p_train.weights.temporal_generated = s.value("lambda1", c.s2p_train.weights.temporal_generated);
      c.s2p_train.weights.temporal_real = s.value("lambda2", c.s2p_train.weights.temporal_real);
      c.s2p_train.lr = s.value("lr", c.s2p_train.lr);
      c.s2p_train.beta1 = s.value("beta1", c.s2p_train.beta1);
      c.s2p_train.beta2 = s.value("beta2", c.s2p_train.beta2);
      c.s2p_train.steps = s.value("steps", c.s2p_train.steps);
      c.s2p_train.batch_size = s.value("batch_size", c.s2p_train.batch_size);
      c.s2p_train.start_stride = s.value("start_stride", c.s2p_train.start_stride);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.propagate();
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) { return from_json(j, PipelineConfig{}); }

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) { return load(path, PipelineConfig{}); }

PipelineConfig PipelineConfig::load(const std::filesystem::path& path, const PipelineConfig& base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return from_json(nlohmann::json::parse(in), base);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: malformed JSON in " + path.string() + ": " + e.what());
  }
}

void PipelineConfig::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path.string());
  out << to_json().dump(2) << '\n';
}

bool PipelineConfig::apply_env() {
  const char* s = std::getenv("AVSYNTH_SEED");
  if (s == nullptr || *s == '\0') return false;
  try {
    seed = std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError("AVSYNTH_SEED must be an unsigned integer");
  }
  propagate();
  return true;
}

PipelineConfig PipelineConfig::desk(int image_size) {
  PipelineConfig c;
  c.image_size = image_size;
  int depth = 0;
  while ((1 << (depth + 1)) <= image_size && depth < 7) ++depth;
  c.s2p = default_s2p(image_size, c.memory);
  c.s2p.generator.depth = depth;
  c.s2p.generator.base_width = 16;
  c.s2p.generator.max_width = 128;
  c.s2p.predictor.depth = depth;
  c.s2p.predictor.base_width = 16;
  c.s2p.predictor.max_width = 128;
  c.s2p.discriminator = {16, 128};
  c.propagate();
  c.validate();
  return c;
}

std::filesystem::path output_root(const std::filesystem::path& fallback) {
  const char* s = std::getenv("AVSYNTH_OUTPUT_ROOT");
  if (s == nullptr || *s == '\0') return fallback;
  return std::filesystem::path(s);
}

}  // namespace avsynth
