#include "avsynth/pose_codec.hpp"

#include <algorithm>
#include <numeric>

#include "avsynth/error.hpp"
#include "avsynth/rng.hpp"
#include "init.hpp"

namespace avsynth {
namespace {

torch::nn::Conv2d conv3x3(int in, int out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
}

}  // namespace

void VaeConfig::validate() const {
  if (image_size < 16 || image_size % 16 != 0) throw ConfigError("vae: image size must be a positive multiple of 16");
  if (latent_dim < 1) throw ConfigError("vae: latent dimension must be >= 1");
  if (decoder_channels[3] != 3) throw ConfigError("vae: decoder must end in 3 channels");
  for (int c : encoder_channels) {
    if (c < 1) throw ConfigError("vae: channel widths must be positive");
  }
  for (int c : decoder_channels) {
    if (c < 1) throw ConfigError("vae: channel widths must be positive");
  }
}

nlohmann::json VaeConfig::to_json() const {
  return {{"image_size", image_size},
          {"latent_dim", latent_dim},
          {"encoder_channels", encoder_channels},
          {"decoder_channels", decoder_channels}};
}

VaeConfig VaeConfig::from_json(const nlohmann::json& j) {
  VaeConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.encoder_channels = j.at("encoder_channels").get<std::array<int, 3>>();
  c.decoder_channels = j.at("decoder_channels").get<std::array<int, 4>>();
  c.validate();
  return c;
}

VaeImpl::VaeImpl(const VaeConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const auto& e = cfg_.encoder_channels;
  const auto& d = cfg_.decoder_channels;
  const int enc_side = cfg_.image_size / 8;
  const int dec_side = cfg_.image_size / 16;

  enc1_ = register_module("enc1", conv3x3(3, e[0]));
  enc2_ = register_module("enc2", conv3x3(e[0], e[1]));
  enc3_ = register_module("enc3", conv3x3(e[1], e[2]));
  const int flat = e[2] * enc_side * enc_side;
  mean_head_ = register_module("mean_head", torch::nn::Linear(flat, cfg_.latent_dim));
  logvar_head_ = register_module("logvar_head", torch::nn::Linear(flat, cfg_.latent_dim));

  dec_in_ = register_module("dec_in", torch::nn::Linear(cfg_.latent_dim, d[0] * dec_side * dec_side));
  dec1_ = register_module("dec1", conv3x3(d[0], d[0]));
  dec2_ = register_module("dec2", conv3x3(d[0], d[1]));
  dec3_ = register_module("dec3", conv3x3(d[1], d[2]));
  dec4_ = register_module("dec4", conv3x3(d[2], d[3]));

  Rng rng(seed);
  detail::he_uniform_init(*this, rng);
  torch::NoGradGuard no_grad;
  logvar_head_->weight.mul_(0.01);
}

std::pair<torch::Tensor, torch::Tensor> VaeImpl::encode(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != cfg_.image_size ||
      images.size(3) != cfg_.image_size) {
    throw ShapeError("vae encode: expected [N, 3, " + std::to_string(cfg_.image_size) + ", " +
                     std::to_string(cfg_.image_size) + "] images");
  }
  auto x = torch::max_pool2d(torch::relu(enc1_(images)), 2);
  x = torch::max_pool2d(torch::relu(enc2_(x)), 2);
  x = torch::max_pool2d(torch::relu(enc3_(x)), 2);
  x = x.flatten(1);
  return {mean_head_(x), logvar_head_(x)};
}

torch::Tensor VaeImpl::decode(const torch::Tensor& codes) {
  if (codes.dim() != 2 || codes.size(1) != cfg_.latent_dim) {
    throw ShapeError("vae decode: expected [N, " + std::to_string(cfg_.latent_dim) + "] codes");
  }
  const int side = cfg_.image_size / 16;
  auto up = [](const torch::Tensor& t) {
    return torch::nn::functional::interpolate(
        t, torch::nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(
               torch::kNearest));
  };
  auto x = dec_in_(codes).view({codes.size(0), cfg_.decoder_channels[0], side, side});
  x = torch::relu(dec1_(up(x)));
  x = torch::relu(dec2_(up(x)));
  x = torch::relu(dec3_(up(x)));
  return torch::sigmoid(dec4_(up(x)));
}

torch::Tensor sample_latent(const torch::Tensor& mean, const torch::Tensor& logvar, std::uint64_t seed) {
  if (mean.sizes() != logvar.sizes()) throw ShapeError("sample_latent: mean and logvar shapes differ");
  if (!torch::isfinite(mean).all().item<bool>() || !torch::isfinite(logvar).all().item<bool>()) {
    throw ConfigError("sample_latent: non-finite mean or logvar");
  }
  Rng rng(seed);
  auto eps = standard_normal(mean.sizes(), rng).to(mean.scalar_type());
  return mean + torch::exp(0.5 * logvar) * eps;
}

torch::Tensor gaussian_kl(const torch::Tensor& mean, const torch::Tensor& logvar) {
  auto per_dim = torch::exp(logvar) + mean * mean - 1.0 - logvar;
  auto per_item = 0.5 * per_dim.sum(-1);
  return per_item.dim() == 0 ? per_item : per_item.mean();
}

VaeLossTerms vae_loss_terms(Vae& vae, const torch::Tensor& images, const PerceptualExtractor& phi,
                            double kl_weight, std::uint64_t seed) {
  auto [mean, logvar] = vae->encode(images);
  auto recon = vae->decode(sample_latent(mean, logvar, seed));
  VaeLossTerms terms;
  terms.perceptual = phi.distance(images, recon);
  terms.kl = gaussian_kl(mean, logvar);
  terms.total = terms.perceptual + kl_weight * terms.kl;
  return terms;
}

VaeLossReport vae_loss(Vae& vae, const torch::Tensor& images, const PerceptualExtractor& phi, double kl_weight,
                       std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  const auto terms = vae_loss_terms(vae, images, phi, kl_weight, seed);
  VaeLossReport r;
  r.perceptual_term = terms.perceptual.item<double>();
  r.kl_term = terms.kl.item<double>();
  r.total = r.perceptual_term + kl_weight * r.kl_term;
  return r;
}

VaeTrainResult train_vae(const torch::Tensor& images, const VaeConfig& model_cfg, const VaeTrainConfig& cfg,
                         const PerceptualExtractor& phi) {
  if (images.dim() != 4 || images.size(0) < 1) throw ConfigError("train_vae: empty dataset");
  if (cfg.batch_size < 1 || cfg.steps < 0 || cfg.lr < 0.0) throw ConfigError("train_vae: invalid training config");

  VaeTrainResult result;
  result.model = Vae(model_cfg, derive_seed(cfg.seed, 1));
  const auto dtype = result.model->parameters().front().scalar_type();
  const auto data = images.to(dtype);
  const auto feature_phi = phi.to(dtype);

  torch::optim::RMSprop opt(result.model->parameters(),
                            torch::optim::RMSpropOptions(cfg.lr).alpha(cfg.rmsprop_alpha).eps(cfg.rmsprop_eps));
  Rng rng(derive_seed(cfg.seed, 2));
  const auto n = data.size(0);
  const auto batch = std::min<std::int64_t>(cfg.batch_size, n);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::size_t cursor = order.size();

  result.loss_history.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::int64_t> idx;
    while (static_cast<std::int64_t>(idx.size()) < batch) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng.engine());
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    auto x = data.index_select(0, torch::tensor(idx, torch::kInt64));
    opt.zero_grad();
    auto terms = vae_loss_terms(result.model, x, feature_phi, cfg.kl_weight, rng.next());
    terms.total.backward();
    opt.step();
    result.loss_history.push_back(terms.total.item<double>());
  }
  return result;
}

torch::Tensor encode_means(Vae& vae, const torch::Tensor& images, std::int64_t chunk) {
  torch::NoGradGuard no_grad;
  const auto dtype = vae->parameters().front().scalar_type();
  std::vector<torch::Tensor> parts;
  for (std::int64_t i = 0; i < images.size(0); i += chunk) {
    parts.push_back(vae->encode(images.slice(0, i, std::min(i + chunk, images.size(0))).to(dtype)).first);
  }
  return torch::cat(parts, 0);
}

torch::Tensor decode_codes(Vae& vae, const torch::Tensor& codes, std::int64_t chunk) {
  torch::NoGradGuard no_grad;
  const auto dtype = vae->parameters().front().scalar_type();
  std::vector<torch::Tensor> parts;
  for (std::int64_t i = 0; i < codes.size(0); i += chunk) {
    parts.push_back(vae->decode(codes.slice(0, i, std::min(i + chunk, codes.size(0))).to(dtype)));
  }
  return torch::cat(parts, 0);
}

}  // namespace avsynth
