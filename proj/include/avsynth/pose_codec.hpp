#pragma once

// Variational autoencoder over pose images.
//
// Encoder: three 3x3 conv stages (ReLU, 2x2 max-pool each) followed by two
// parallel affine heads giving the latent mean and log-variance.
// Decoder: an affine map from the latent code to a (S/16)x(S/16) map, then
// four stages of 2x nearest upsampling + 3x3 conv; ReLU after the first three
// and a logistic squashing after the last, so outputs lie in [0, 1].

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "avsynth/perceptual.hpp"

namespace avsynth {

inline constexpr int kLatentDim = 128;

struct VaeConfig {
  int image_size = 256;  // multiple of 16
  int latent_dim = kLatentDim;
  std::array<int, 3> encoder_channels{32, 64, 128};
  std::array<int, 4> decoder_channels{128, 64, 32, 3};

  void validate() const;
  nlohmann::json to_json() const;
  static VaeConfig from_json(const nlohmann::json& j);
};

class VaeImpl : public torch::nn::Module {
 public:
  explicit VaeImpl(const VaeConfig& cfg = {}, std::uint64_t seed = 0);

  // images [N, 3, S, S] -> (mean, logvar), each [N, latent_dim]
  std::pair<torch::Tensor, torch::Tensor> encode(const torch::Tensor& images);
  // codes [N, latent_dim] -> images [N, 3, S, S] in [0, 1]
  torch::Tensor decode(const torch::Tensor& codes);

  const VaeConfig& config() const { return cfg_; }
  torch::nn::Linear mean_head() const { return mean_head_; }
  torch::nn::Linear logvar_head() const { return logvar_head_; }

 private:
  VaeConfig cfg_;
  torch::nn::Conv2d enc1_{nullptr}, enc2_{nullptr}, enc3_{nullptr};
  torch::nn::Linear mean_head_{nullptr}, logvar_head_{nullptr};
  torch::nn::Linear dec_in_{nullptr};
  torch::nn::Conv2d dec1_{nullptr}, dec2_{nullptr}, dec3_{nullptr}, dec4_{nullptr};
};
TORCH_MODULE(Vae);

// z = mean + exp(logvar / 2) * eps with eps ~ N(0, I) drawn from `seed`.
// Differentiable in mean and logvar. Throws ConfigError on non-finite input.
torch::Tensor sample_latent(const torch::Tensor& mean, const torch::Tensor& logvar, std::uint64_t seed);

// 0.5 * sum(exp(logvar) + mean^2 - 1 - logvar) over the latent dimension,
// averaged over the batch.
torch::Tensor gaussian_kl(const torch::Tensor& mean, const torch::Tensor& logvar);

struct VaeLossTerms {
  torch::Tensor total;
  torch::Tensor perceptual;
  torch::Tensor kl;
};

struct VaeLossReport {
  double total = 0.0;
  double perceptual_term = 0.0;
  double kl_term = 0.0;
};

// perceptual = phi.distance(images, decode(sample_latent(encode(images))));
// total = perceptual + kl_weight * kl.
VaeLossTerms vae_loss_terms(Vae& vae, const torch::Tensor& images, const PerceptualExtractor& phi,
                            double kl_weight, std::uint64_t seed);
VaeLossReport vae_loss(Vae& vae, const torch::Tensor& images, const PerceptualExtractor& phi,
                       double kl_weight, std::uint64_t seed);

struct VaeTrainConfig {
  double lr = 0.00025;
  double kl_weight = 1e-3;
  double rmsprop_alpha = 0.99;
  double rmsprop_eps = 1e-8;
  int steps = 1000;
  int batch_size = 8;
  std::uint64_t seed = 0;
};

struct VaeTrainResult {
  Vae model{nullptr};
  std::vector<double> loss_history;  // one entry per step
};

// RMSProp on mini-batches drawn without replacement per epoch.
// images: [N, 3, S, S] in [0, 1], N >= 1.
VaeTrainResult train_vae(const torch::Tensor& images, const VaeConfig& model_cfg, const VaeTrainConfig& cfg,
                         const PerceptualExtractor& phi);

// Encoder means for a whole sequence, processed in chunks.
torch::Tensor encode_means(Vae& vae, const torch::Tensor& images, std::int64_t chunk = 32);
// Decoded images for a code sequence, processed in chunks.
torch::Tensor decode_codes(Vae& vae, const torch::Tensor& codes, std::int64_t chunk = 32);

}  // namespace avsynth
