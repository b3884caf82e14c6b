#pragma once

// Pipeline configuration. Defaults reproduce the reference setup: 30 Hz
// ticks, 256x256 images, 40 log-mel bands, look-back window 15, memory 2,
// RMSProp at 2.5e-4 (VAE) and 1e-6 (BLSTM), Adam at 2e-4 with betas
// (0.5, 0.999) and loss weights (0.05, 10, 10) for SeqPix2Pix.
//
// On disk the configuration is a JSON object with the same nesting as
// to_json(); any subset of keys may be given and the rest keep defaults.

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "avsynth/audio2code.hpp"
#include "avsynth/audio_features.hpp"
#include "avsynth/pose_codec.hpp"
#include "avsynth/seq_pix2pix.hpp"

namespace avsynth {

struct PipelineConfig {
  int frame_rate = 30;
  int image_size = 256;
  int window = 15;
  int memory = 2;
  std::string perceptual = "random";
  std::uint64_t seed = 0;
  bool parallel_stage2 = true;

  FeatureConfig features{};
  VaeConfig vae{};
  VaeTrainConfig vae_train{};
  BlstmConfig blstm{};
  BlstmTrainConfig blstm_train{};
  SeqPix2PixConfig s2p = default_s2p(256, 2);
  SeqTrainConfig s2p_train{};

  // Throws ConfigError when sizes, rates or dimensions disagree across stages.
  void validate() const;

  nlohmann::json to_json() const;
  // Missing keys keep the values of `base`.
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig from_json(const nlohmann::json& j, const PipelineConfig& base);
  static PipelineConfig load(const std::filesystem::path& path);
  static PipelineConfig load(const std::filesystem::path& path, const PipelineConfig& base);
  void save(const std::filesystem::path& path) const;

  // Applies AVSYNTH_SEED when set. Returns true if anything changed.
  bool apply_env();

  // Re-derives per-stage seeds and sizes from the top-level fields.
  void propagate();

  // Reduced setup for tests and CPU-only experiments at `image_size`
  // (multiple of 16): VAE and BLSTM unchanged, U-Net depth limited by the
  // image size, generator/predictor/discriminator widths 16..128.
  static PipelineConfig desk(int image_size);

  static SeqPix2PixConfig default_s2p(int image_size, int memory);
};

// AVSYNTH_OUTPUT_ROOT when set, else `fallback`.
std::filesystem::path output_root(const std::filesystem::path& fallback);

}  // namespace avsynth
