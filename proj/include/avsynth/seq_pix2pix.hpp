#pragma once

// Sequential pose-to-frame translation: a U-Net generator G, an unconditional
// full-image discriminator D and a U-Net temporal predictor P that maps the
// previous `memory` frames (channel-concatenated) to the next one.
//
// Objective for a clip of memory+1 aligned (pose, frame) pairs, t = memory:
//
//   gan_d         = mean_i [ (D(y_i) - 1)^2 + D(G(w_i))^2 ]      i = 0..t
//   gan_g         = mean_i [ (D(G(w_i)) - 1)^2 ]
//   structural    = perceptual distance(y_t, G(w_t))
//   temporal_gen  = mean | y_t - P(G(w_0), ..., G(w_{t-1})) |
//   temporal_real = mean | y_t - P(y_0, ..., y_{t-1}) |
//   total_g       = gan_g + l0 * structural + l1 * temporal_gen + l2 * temporal_real
//
// Batches of clips average every term over the batch.

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "avsynth/perceptual.hpp"

namespace avsynth {

struct UNetConfig {
  int in_channels = 3;
  int out_channels = 3;
  int depth = 7;
  int base_width = 64;
  int max_width = 512;

  void validate(int image_size) const;
  nlohmann::json to_json() const;
  static UNetConfig from_json(const nlohmann::json& j);
};

// Encoder of `depth` 4x4 stride-2 convolutions (LeakyReLU 0.2 between
// them), mirrored decoder of 4x4 stride-2 transposed convolutions (ReLU
// before each) with skip concatenation, logistic output in [0, 1].
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(const UNetConfig& cfg = {});
  torch::Tensor forward(const torch::Tensor& x);
  const UNetConfig& config() const { return cfg_; }

 private:
  UNetConfig cfg_;
  std::vector<torch::nn::Conv2d> down_;
  std::vector<torch::nn::ConvTranspose2d> up_;
};
TORCH_MODULE(UNet);

struct DiscriminatorConfig {
  int base_width = 64;
  int max_width = 512;

  nlohmann::json to_json() const;
  static DiscriminatorConfig from_json(const nlohmann::json& j);
};

// DCGAN-style classifier: 4x4 stride-2 convolutions with LeakyReLU until the
// map is 4x4, then one affine layer to a single raw score per image.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  DiscriminatorImpl(const DiscriminatorConfig& cfg, int image_size);
  // [N, 3, S, S] -> [N]
  torch::Tensor forward(const torch::Tensor& x);
  int image_size() const { return image_size_; }

 private:
  int image_size_;
  std::vector<torch::nn::Conv2d> convs_;
  torch::nn::Linear score_{nullptr};
};
TORCH_MODULE(Discriminator);

struct LossWeights {
  double structural = 0.05;
  double temporal_generated = 10.0;
  double temporal_real = 10.0;
  int memory = 2;

  void validate() const;
};

struct SeqPix2PixConfig {
  int image_size = 256;
  int memory = 2;
  UNetConfig generator{};        // in/out channels are fixed to 3/3
  UNetConfig predictor{};        // in channels fixed to 3 * memory
  DiscriminatorConfig discriminator{};

  void validate() const;
  nlohmann::json to_json() const;
  static SeqPix2PixConfig from_json(const nlohmann::json& j);
};

struct SeqPix2PixModels {
  UNet generator{nullptr};
  Discriminator discriminator{nullptr};
  UNet predictor{nullptr};
  SeqPix2PixConfig config;

  static SeqPix2PixModels create(const SeqPix2PixConfig& cfg, std::uint64_t seed);
  void to(torch::ScalarType dtype);
};

struct SeqLossTensors {
  torch::Tensor gan_g, gan_d, structural, temporal_gen, temporal_real, total_g;
};

struct SeqLossReport {
  double gan_g = 0.0;
  double gan_d = 0.0;
  double structural = 0.0;
  double temporal_gen = 0.0;
  double temporal_real = 0.0;
  double total_g = 0.0;
};

// Least-squares adversarial terms:
//   gan_d = mean[(real - 1)^2 + fake^2], gan_g = mean[(fake - 1)^2].
// Returns (gan_g, gan_d).
std::pair<torch::Tensor, torch::Tensor> lsgan_losses(const torch::Tensor& real_scores,
                                                     const torch::Tensor& fake_scores);

// y = G(w) for [3, S, S] or [N, 3, S, S].
torch::Tensor generate(UNet& generator, const torch::Tensor& poses);
// history [memory, 3, S, S] or [N, memory, 3, S, S] -> next frame(s).
torch::Tensor predict_next(UNet& predictor, const torch::Tensor& history, int memory);
// Frame i = generate(pose i); processed in chunks.
torch::Tensor synthesize_frames(UNet& generator, const torch::Tensor& poses, std::int64_t chunk = 16);

// poses, frames: [B, memory+1, 3, S, S]. gan_d uses detached generator
// outputs.
SeqLossTensors sequence_objective_terms(const torch::Tensor& poses, const torch::Tensor& frames,
                                        SeqPix2PixModels& models, const PerceptualExtractor& phi,
                                        const LossWeights& weights);
SeqLossReport sequence_objective(const torch::Tensor& poses, const torch::Tensor& frames, SeqPix2PixModels& models,
                                 const PerceptualExtractor& phi, const LossWeights& weights);
// total_g is recomputed in double from the reported terms.
SeqLossReport to_report(const SeqLossTensors& t, const LossWeights& weights);

// Every window of memory+1 consecutive ticks whose start is a multiple of
// `start_stride`: ([K, memory+1, 3, S, S] poses, same for frames).
std::pair<torch::Tensor, torch::Tensor> make_clips(const torch::Tensor& poses, const torch::Tensor& frames,
                                                   int memory, int start_stride);

struct SeqTrainConfig {
  LossWeights weights{};
  double lr = 0.0002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int steps = 1000;
  int batch_size = 1;
  int start_stride = 30;
  std::uint64_t seed = 0;
};

struct SeqTrainResult {
  SeqPix2PixModels models;
  std::vector<SeqLossReport> history;  // one per step, from the generator step
};

// Alternating updates, one discriminator step then one joint (G, P) step per
// iteration, each with its own Adam optimizer.
// poses, frames: [N, 3, S, S] aligned sequences with N >= memory + 1.
SeqTrainResult train_seqpix2pix(const torch::Tensor& poses, const torch::Tensor& frames,
                                const SeqPix2PixConfig& model_cfg, const SeqTrainConfig& cfg,
                                const PerceptualExtractor& phi);
// Same, on pre-cut clips [K, memory+1, 3, S, S]; start_stride is ignored.
SeqTrainResult train_seqpix2pix_clips(const torch::Tensor& clip_poses, const torch::Tensor& clip_frames,
                                      const SeqPix2PixConfig& model_cfg, const SeqTrainConfig& cfg,
                                      const PerceptualExtractor& phi);

}  // namespace avsynth
