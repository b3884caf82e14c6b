#pragma once

// End-to-end orchestration: dataset preparation, staged training, model
// bundles, inference and frame export.
//
// A prepared store is a directory:
//
//   manifest.json   { "format_version", "kind": "store", "fps", "count",
//                     "image_size", "sample_rate", "pose_source",
//                     "synthetic": true, "checksum" }
//   audio.wav       16-bit PCM at the feature sample rate
//   features.avsa   raw (unnormalized) log-mel rows, one per tick
//   frames/         frame directory, image_size x image_size
//   poses/          frame directory of pose images, same count
//
// Training runs in two stages. Stage 1 fits the VAE on pose images. Stage 2
// fits the BLSTM (normalized feature windows -> VAE encoder means) and
// SeqPix2Pix (pose/frame clips); both require a stage-1 VAE and are
// independent of each other.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "avsynth/archive.hpp"
#include "avsynth/audio2code.hpp"
#include "avsynth/audio_features.hpp"
#include "avsynth/config.hpp"
#include "avsynth/image_io.hpp"
#include "avsynth/perceptual.hpp"
#include "avsynth/pose_codec.hpp"
#include "avsynth/pose_provider.hpp"
#include "avsynth/seq_pix2pix.hpp"

namespace avsynth {

inline constexpr int kStoreFormatVersion = 1;
inline constexpr int kBundleFormatVersion = 1;

struct DataStore {
  torch::Tensor frames;           // [N, 3, S, S] float32
  torch::Tensor poses;            // [N, 3, S, S] float32
  AudioFeatureSequence features;  // [N, n_mels] raw log-mel
  Waveform audio;
  std::string pose_source = "synthetic";

  std::int64_t length() const { return frames.defined() ? frames.size(0) : 0; }
  // Throws ShapeError when the three streams are not tick-aligned.
  void validate() const;
};

// Frames are brought to cfg.image_size with prepare_frame, audio is resampled
// to the feature rate, poses come from `provider`. Frame count and feature
// row count may differ by at most one tick (ConfigError otherwise); the
// longer stream is truncated.
DataStore prepare_dataset(const torch::Tensor& raw_frames, const Waveform& audio, const PoseProvider& provider,
                          const PipelineConfig& cfg);
// Same, reading every image in `frames_dir` and the WAV at `audio_path`.
DataStore prepare_dataset(const std::filesystem::path& frames_dir, const std::filesystem::path& audio_path,
                          const PoseProvider& provider, const PipelineConfig& cfg);

// Returns the store checksum written into manifest.json.
std::string save_store(const std::filesystem::path& dir, const DataStore& store);
// Throws IoError when a component is missing.
DataStore load_store(const std::filesystem::path& dir);
std::string store_checksum(const std::filesystem::path& dir);

// Trained components. Everything except the discriminator and the predictor
// is needed for inference.
struct ModelBundle {
  std::optional<VaeConfig> vae_config;
  Vae vae{nullptr};
  std::optional<BlstmConfig> blstm_config;
  Blstm blstm{nullptr};
  int window = 15;
  std::optional<NormStats> norm_stats;
  std::optional<SeqPix2PixConfig> s2p_config;
  UNet generator{nullptr};
  Discriminator discriminator{nullptr};
  UNet predictor{nullptr};
  FeatureConfig features{};
  std::string perceptual_id;
  int format_version = kBundleFormatVersion;

  bool has_vae() const { return !vae.is_empty(); }
  bool has_blstm() const { return !blstm.is_empty() && norm_stats.has_value(); }
  bool has_generator() const { return !generator.is_empty(); }
  bool complete() const { return has_vae() && has_blstm() && has_generator(); }
  // Throws DependencyError naming the first missing inference component and
  // ConfigError when dimensions disagree.
  void check_complete() const;

  Archive to_archive() const;
  static ModelBundle from_archive(const Archive& archive);
  void save(const std::filesystem::path& path) const;
  static ModelBundle load(const std::filesystem::path& path);
  // SHA-256 of the serialized archive.
  std::string checksum() const;

  // Per-stage checkpoints in a model directory: vae.avsa, blstm.avsa,
  // generator.avsa, discriminator.avsa, predictor.avsa. Missing files leave
  // the corresponding component empty.
  void save_stages(const std::filesystem::path& dir) const;
  static ModelBundle load_stages(const std::filesystem::path& dir);
  // A bundle file, or a model directory.
  static ModelBundle open(const std::filesystem::path& path);
};

// Stage 1.
void train_vae_stage(ModelBundle& bundle, const DataStore& store, const PipelineConfig& cfg,
                     const PerceptualExtractor& phi);
// Stage 2a. Fits the normalization stats on the store features.
void train_blstm_stage(ModelBundle& bundle, const DataStore& store, const PipelineConfig& cfg);
// Stage 2b.
void train_s2p_stage(ModelBundle& bundle, const DataStore& store, const PipelineConfig& cfg,
                     const PerceptualExtractor& phi);

// Stage 1 then both stage-2 trainers (concurrently when
// cfg.parallel_stage2).
ModelBundle train_all(const DataStore& store, const PipelineConfig& cfg, const PerceptualExtractor& phi);

// BLSTM training data from a store: normalized windows [N, W, n_mels] and
// VAE encoder means [N, latent].
std::pair<torch::Tensor, torch::Tensor> blstm_training_data(const DataStore& store, ModelBundle& bundle,
                                                            int window);

// Maps pose images [n, 3, S, S] to frames [n, 3, S, S].
using FrameStage = std::function<torch::Tensor(const torch::Tensor&)>;

struct SynthesisResult {
  torch::Tensor codes;   // [T, latent]
  torch::Tensor poses;   // [T, 3, S, S]
  torch::Tensor frames;  // [T, 3, S, S]
};

struct SynthesisOptions {
  std::int64_t chunk = 64;  // ticks per streamed block
  FrameStage frame_stage;   // empty: the bundle generator
};

inline constexpr double kMinSynthesisSeconds = 1.0;

// Audio -> features -> normalize -> windows -> codes -> decoded poses ->
// frames. One output per feature row. Throws DependencyError for an
// incomplete bundle and ConfigError for audio shorter than one second.
SynthesisResult synthesize(const Waveform& audio, ModelBundle& bundle, const SynthesisOptions& opts = {});

// Streams blocks of `opts.chunk` ticks straight to a frame directory.
FrameManifest synthesize_to_dir(const Waveform& audio, ModelBundle& bundle, const std::filesystem::path& out_dir,
                                const SynthesisOptions& opts = {});

// Writes frame_%06d.png files plus a manifest (fps, count, synthetic tag and
// the optional bundle checksum). Throws ShapeError on an empty sequence.
FrameManifest export_frames(const torch::Tensor& frames, const std::filesystem::path& out_dir, int fps = 30,
                            std::optional<std::string> bundle_checksum = std::nullopt);

}  // namespace avsynth
