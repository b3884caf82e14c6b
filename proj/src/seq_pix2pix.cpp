#include "avsynth/seq_pix2pix.hpp"

#include <algorithm>
#include <numeric>

#include "avsynth/error.hpp"
#include "avsynth/rng.hpp"
#include "init.hpp"

namespace avsynth {
namespace {

constexpr double kInitStd = 0.02;

torch::Tensor as_batch(const torch::Tensor& images) { return images.dim() == 3 ? images.unsqueeze(0) : images; }

std::vector<torch::Tensor> all_parameters(std::initializer_list<const torch::nn::Module*> modules) {
  std::vector<torch::Tensor> out;
  for (const auto* m : modules) {
    for (const auto& p : m->parameters(true)) out.push_back(p);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// configs

void UNetConfig::validate(int image_size) const {
  if (in_channels < 1 || out_channels < 1 || base_width < 1 || max_width < 1) {
    throw ConfigError("unet: channel counts must be positive");
  }
  if (depth < 1) throw ConfigError("unet: depth must be >= 1");
  if (image_size % (1 << depth) != 0) {
    throw ConfigError("unet: image size " + std::to_string(image_size) + " not divisible by 2^" + std::to_string(depth));
  }
}

nlohmann::json UNetConfig::to_json() const {
  return {{"in_channels", in_channels},
          {"out_channels", out_channels},
          {"depth", depth},
          {"base_width", base_width},
          {"max_width", max_width}};
}

UNetConfig UNetConfig::from_json(const nlohmann::json& j) {
  UNetConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.depth = j.at("depth").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.max_width = j.at("max_width").get<int>();
  return c;
}

nlohmann::json DiscriminatorConfig::to_json() const { return {{"base_width", base_width}, {"max_width", max_width}}; }

DiscriminatorConfig DiscriminatorConfig::from_json(const nlohmann::json& j) {
  return {j.at("base_width").get<int>(), j.at("max_width").get<int>()};
}

void LossWeights::validate() const {
  if (structural < 0.0 || temporal_generated < 0.0 || temporal_real < 0.0) {
    throw ConfigError("seqpix2pix: loss weights must be non-negative");
  }
  if (memory < 1) throw ConfigError("seqpix2pix: memory length must be >= 1");
}

void SeqPix2PixConfig::validate() const {
  if (image_size < 8) throw ConfigError("seqpix2pix: image size must be >= 8");
  if (memory < 1) throw ConfigError("seqpix2pix: memory length must be >= 1");
  generator.validate(image_size);
  predictor.validate(image_size);
  if (generator.in_channels != 3 || generator.out_channels != 3) throw ConfigError("seqpix2pix: generator must map 3 -> 3 channels");
  if (predictor.in_channels != 3 * memory || predictor.out_channels != 3) {
    throw ConfigError("seqpix2pix: predictor must map 3*memory -> 3 channels");
  }
}

nlohmann::json SeqPix2PixConfig::to_json() const {
  return {{"image_size", image_size},
          {"memory", memory},
          {"generator", generator.to_json()},
          {"predictor", predictor.to_json()},
          {"discriminator", discriminator.to_json()}};
}

SeqPix2PixConfig SeqPix2PixConfig::from_json(const nlohmann::json& j) {
  SeqPix2PixConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.memory = j.at("memory").get<int>();
  c.generator = UNetConfig::from_json(j.at("generator"));
  c.predictor = UNetConfig::from_json(j.at("predictor"));
  c.discriminator = DiscriminatorConfig::from_json(j.at("discriminator"));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// networks

UNetImpl::UNetImpl(const UNetConfig& cfg) : cfg_(cfg) {
  std::vector<int> width(static_cast<std::size_t>(cfg_.depth + 1));
  width[0] = cfg_.in_channels;
  for (int k = 1; k <= cfg_.depth; ++k) width[k] = std::min(cfg_.base_width << (k - 1), cfg_.max_width);

  for (int k = 1; k <= cfg_.depth; ++k) {
    down_.push_back(register_module("down" + std::to_string(k),
                                    torch::nn::Conv2d(torch::nn::Conv2dOptions(width[k - 1], width[k], 4).stride(2).padding(1))));
  }
  for (int k = 1; k <= cfg_.depth; ++k) {
    const int in = k == cfg_.depth ? width[k] : 2 * width[k];
    const int out = k == 1 ? cfg_.out_channels : width[k - 1];
    up_.push_back(register_module(
        "up" + std::to_string(k),
        torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1))));
  }
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != cfg_.in_channels) {
    throw ShapeError("unet: expected [N, " + std::to_string(cfg_.in_channels) + ", H, W] input");
  }
  const auto side = 1 << cfg_.depth;
  if (x.size(2) % side != 0 || x.size(3) % side != 0 || x.size(2) < side || x.size(3) < side) {
    throw ShapeError("unet: spatial size must be a multiple of " + std::to_string(side));
  }
  std::vector<torch::Tensor> skips;
  skips.reserve(down_.size());
  auto h = down_[0]->forward(x);
  skips.push_back(h);
  for (std::size_t k = 1; k < down_.size(); ++k) {
    h = down_[k]->forward(torch::leaky_relu(h, 0.2));
    skips.push_back(h);
  }
  h = up_.back()->forward(torch::relu(skips.back()));
  for (int k = cfg_.depth - 1; k >= 1; --k) {
    h = up_[k - 1]->forward(torch::relu(torch::cat({h, skips[k - 1]}, 1)));
  }
  return torch::sigmoid(h);
}

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorConfig& cfg, int image_size) : image_size_(image_size) {
  if (image_size < 8 || (image_size & (image_size - 1)) != 0) {
    throw ConfigError("discriminator: image size must be a power of two >= 8");
  }
  int channels = 3, width = cfg.base_width, side = image_size, k = 0;
  while (side > 4) {
    convs_.push_back(register_module("conv" + std::to_string(++k),
                                     torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, width, 4).stride(2).padding(1))));
    channels = width;
    width = std::min(2 * width, cfg.max_width);
    side /= 2;
  }
  score_ = register_module("score", torch::nn::Linear(channels * 16, 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != image_size_ || x.size(3) != image_size_) {
    throw ShapeError("discriminator: expected [N, 3, " + std::to_string(image_size_) + ", " +
                     std::to_string(image_size_) + "] images");
  }
  auto h = x;
  for (auto& c : convs_) h = torch::leaky_relu(c->forward(h), 0.2);
  return score_(h.flatten(1)).squeeze(1);
}

SeqPix2PixModels SeqPix2PixModels::create(const SeqPix2PixConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SeqPix2PixModels m;
  m.config = cfg;
  m.generator = UNet(cfg.generator);
  m.discriminator = Discriminator(cfg.discriminator, cfg.image_size);
  m.predictor = UNet(cfg.predictor);
  Rng g_rng(derive_seed(seed, 11)), d_rng(derive_seed(seed, 12)), p_rng(derive_seed(seed, 13));
  detail::normal_init(*m.generator, kInitStd, g_rng);
  detail::normal_init(*m.discriminator, kInitStd, d_rng);
  detail::normal_init(*m.predictor, kInitStd, p_rng);
  return m;
}

void SeqPix2PixModels::to(torch::ScalarType dtype) {
  generator->to(dtype);
  discriminator->to(dtype);
  predictor->to(dtype);
}

// ---------------------------------------------------------------------------
// inference

torch::Tensor generate(UNet& generator, const torch::Tensor& poses) {
  const bool single = poses.dim() == 3;
  auto x = as_batch(poses);
  if (x.dim() != 4 || x.size(1) != 3) throw ShapeError("generate: expected [3, S, S] or [N, 3, S, S] poses");
  auto y = generator->forward(x.to(generator->parameters().front().scalar_type()));
  return single ? y.squeeze(0) : y;
}

torch::Tensor predict_next(UNet& predictor, const torch::Tensor& history, int memory) {
  const bool single = history.dim() == 4;
  auto h = single ? history.unsqueeze(0) : history;
  if (h.dim() != 5 || h.size(2) != 3) throw ShapeError("predict_next: expected [L, 3, S, S] or [N, L, 3, S, S] history");
  if (h.size(1) != memory) {
    throw ShapeError("predict_next: expected exactly " + std::to_string(memory) + " frames, got " +
                     std::to_string(h.size(1)));
  }
  auto stacked = h.reshape({h.size(0), 3 * memory, h.size(3), h.size(4)});
  auto y = predictor->forward(stacked.to(predictor->parameters().front().scalar_type()));
  return single ? y.squeeze(0) : y;
}

torch::Tensor synthesize_frames(UNet& generator, const torch::Tensor& poses, std::int64_t chunk) {
  if (poses.dim() != 4 || poses.size(0) < 1) throw ShapeError("synthesize_frames: expected non-empty [N, 3, S, S] poses");
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (std::int64_t i = 0; i < poses.size(0); i += chunk) {
    parts.push_back(generate(generator, poses.slice(0, i, std::min(i + chunk, poses.size(0)))));
  }
  return torch::cat(parts, 0);
}

// ---------------------------------------------------------------------------
// objective

std::pair<torch::Tensor, torch::Tensor> lsgan_losses(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  if (real_scores.numel() == 0 || fake_scores.numel() == 0) throw ShapeError("lsgan_losses: empty score list");
  auto gan_d = (real_scores - 1.0).pow(2).mean() + fake_scores.pow(2).mean();
  auto gan_g = (fake_scores - 1.0).pow(2).mean();
  return {gan_g, gan_d};
}

SeqLossTensors sequence_objective_terms(const torch::Tensor& poses, const torch::Tensor& frames,
                                        SeqPix2PixModels& models, const PerceptualExtractor& phi,
                                        const LossWeights& weights) {
  weights.validate();
  const int memory = models.config.memory;
  if (weights.memory != memory) throw ConfigError("sequence_objective: loss memory differs from model memory");
  if (poses.dim() != 5 || poses.sizes() != frames.sizes() || poses.size(2) != 3) {
    throw ShapeError("sequence_objective: expected matching [B, memory+1, 3, S, S] poses and frames");
  }
  if (poses.size(1) < memory + 1) {
    throw ShapeError("sequence_objective: clip shorter than memory + 1 = " + std::to_string(memory + 1));
  }
  const auto dtype = models.generator->parameters().front().scalar_type();
  // Only the trailing memory+1 ticks enter the objective.
  auto w = poses.slice(1, poses.size(1) - (memory + 1)).to(dtype);
  auto y = frames.slice(1, frames.size(1) - (memory + 1)).to(dtype);
  const auto B = w.size(0), n = w.size(1), S = w.size(3);

  auto g = models.generator->forward(w.reshape({B * n, 3, S, S}));
  auto y_flat = y.reshape({B * n, 3, S, S});

  SeqLossTensors t;
  auto real_scores = models.discriminator->forward(y_flat);
  auto fake_scores = models.discriminator->forward(g);
  t.gan_g = lsgan_losses(real_scores, fake_scores).first;
  t.gan_d = lsgan_losses(real_scores, models.discriminator->forward(g.detach())).second;

  auto g_seq = g.view({B, n, 3, S, S});
  auto y_t = y.select(1, memory);
  t.structural = phi.distance(y_t, g_seq.select(1, memory));
  auto from_generated = models.predictor->forward(g_seq.slice(1, 0, memory).reshape({B, 3 * memory, S, S}));
  auto from_real = models.predictor->forward(y.slice(1, 0, memory).reshape({B, 3 * memory, S, S}));
  t.temporal_gen = (y_t - from_generated).abs().mean();
  t.temporal_real = (y_t - from_real).abs().mean();
  t.total_g = t.gan_g + weights.structural * t.structural + weights.temporal_generated * t.temporal_gen +
              weights.temporal_real * t.temporal_real;
  return t;
}

SeqLossReport to_report(const SeqLossTensors& t, const LossWeights& weights) {
  SeqLossReport r;
  r.gan_g = t.gan_g.item<double>();
  r.gan_d = t.gan_d.item<double>();
  r.structural = t.structural.item<double>();
  r.temporal_gen = t.temporal_gen.item<double>();
  r.temporal_real = t.temporal_real.item<double>();
  r.total_g = r.gan_g + weights.structural * r.structural + weights.temporal_generated * r.temporal_gen +
              weights.temporal_real * r.temporal_real;
  return r;
}

SeqLossReport sequence_objective(const torch::Tensor& poses, const torch::Tensor& frames, SeqPix2PixModels& models,
                                 const PerceptualExtractor& phi, const LossWeights& weights) {
  torch::NoGradGuard no_grad;
  return to_report(sequence_objective_terms(poses, frames, models, phi, weights), weights);
}

std::pair<torch::Tensor, torch::Tensor> make_clips(const torch::Tensor& poses, const torch::Tensor& frames, int memory,
                                                   int start_stride) {
  if (poses.dim() != 4 || poses.sizes() != frames.sizes()) {
    throw ShapeError("make_clips: expected matching [N, 3, S, S] poses and frames");
  }
  if (memory < 1 || start_stride < 1) throw ConfigError("make_clips: memory and stride must be >= 1");
  const auto len = memory + 1;
  if (poses.size(0) < len) throw ShapeError("make_clips: sequence shorter than memory + 1");
  std::vector<torch::Tensor> ps, fs;
  for (std::int64_t s = 0; s + len <= poses.size(0); s += start_stride) {
    ps.push_back(poses.slice(0, s, s + len));
    fs.push_back(frames.slice(0, s, s + len));
  }
  return {torch::stack(ps), torch::stack(fs)};
}

// ---------------------------------------------------------------------------
// training

SeqTrainResult train_seqpix2pix_clips(const torch::Tensor& clip_poses, const torch::Tensor& clip_frames,
                                      const SeqPix2PixConfig& model_cfg, const SeqTrainConfig& cfg,
                                      const PerceptualExtractor& phi) {
  if (clip_poses.dim() != 5 || clip_poses.size(0) < 1) throw ConfigError("train_seqpix2pix: empty dataset");
  if (cfg.steps < 0 || cfg.batch_size < 1 || cfg.lr < 0.0) throw ConfigError("train_seqpix2pix: invalid training config");
  if (cfg.weights.memory != model_cfg.memory) throw ConfigError("train_seqpix2pix: loss memory differs from model memory");

  SeqTrainResult result;
  result.models = SeqPix2PixModels::create(model_cfg, derive_seed(cfg.seed, 1));
  auto& m = result.models;
  const auto dtype = m.generator->parameters().front().scalar_type();
  const auto feature_phi = phi.to(dtype);
  const auto poses = clip_poses.to(dtype);
  const auto frames = clip_frames.to(dtype);

  const auto adam = torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2});
  torch::optim::Adam d_opt(m.discriminator->parameters(), adam);
  torch::optim::Adam gp_opt(all_parameters({m.generator.get(), m.predictor.get()}), adam);

  Rng rng(derive_seed(cfg.seed, 2));
  const auto n = poses.size(0);
  const auto batch = std::min<std::int64_t>(cfg.batch_size, n);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::size_t cursor = order.size();
  const int memory = model_cfg.memory;

  result.history.reserve(static_cast<std::size_t>(cfg.steps));
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
    auto index = torch::tensor(idx, torch::kInt64);
    auto w = poses.index_select(0, index);
    auto y = frames.index_select(0, index);
    const auto B = w.size(0), S = w.size(3);
    auto w_flat = w.reshape({B * (memory + 1), 3, S, S});
    auto y_flat = y.reshape({B * (memory + 1), 3, S, S});

    // Discriminator step.
    torch::Tensor fake;
    {
      torch::NoGradGuard no_grad;
      fake = m.generator->forward(w_flat);
    }
    d_opt.zero_grad();
    auto gan_d = lsgan_losses(m.discriminator->forward(y_flat), m.discriminator->forward(fake)).second;
    gan_d.backward();
    d_opt.step();

    // Generator + predictor step.
    gp_opt.zero_grad();
    auto terms = sequence_objective_terms(w, y, m, feature_phi, cfg.weights);
    terms.total_g.backward();
    gp_opt.step();
    result.history.push_back(to_report(terms, cfg.weights));
  }
  return result;
}

SeqTrainResult train_seqpix2pix(const torch::Tensor& poses, const torch::Tensor& frames,
                                const SeqPix2PixConfig& model_cfg, const SeqTrainConfig& cfg,
                                const PerceptualExtractor& phi) {
  if (poses.dim() != 4 || poses.size(0) < 1) throw ConfigError("train_seqpix2pix: empty dataset");
  auto [cp, cf] = make_clips(poses, frames, model_cfg.memory, cfg.start_stride);
  return train_seqpix2pix_clips(cp, cf, model_cfg, cfg, phi);
}

}  // namespace avsynth
