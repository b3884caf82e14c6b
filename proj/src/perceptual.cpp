#include "avsynth/perceptual.hpp"

#include <cmath>

#include "avsynth/archive.hpp"
#include "avsynth/error.hpp"
#include "avsynth/rng.hpp"

namespace avsynth {
namespace {

struct LayerSpec {
  const char* name;
  int in;
  int out;
  bool pool_after;
};

constexpr std::array<LayerSpec, 8> kLayers{{
    {"conv1_1", 3, 64, false},
    {"conv1_2", 64, 64, true},
    {"conv2_1", 64, 128, false},
    {"conv2_2", 128, 128, true},
    {"conv3_1", 128, 256, false},
    {"conv3_2", 256, 256, false},
    {"conv3_3", 256, 256, false},
    {"conv3_4", 256, 256, true},
}};

torch::Tensor as_batch(const torch::Tensor& images) {
  if (images.dim() == 3) return images.unsqueeze(0);
  return images;
}

void check_images(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3) throw ShapeError("perceptual: expected [N, 3, H, W] images");
  if (x.size(2) < 8 || x.size(3) < 8 || x.size(2) % 8 != 0 || x.size(3) % 8 != 0) {
    throw ShapeError("perceptual: spatial size must be a positive multiple of 8");
  }
}

}  // namespace

PerceptualExtractor PerceptualExtractor::random(std::uint64_t seed) {
  auto state = std::make_shared<State>();
  Rng rng(seed);
  for (const auto& spec : kLayers) {
    auto w = torch::empty({spec.out, spec.in, 3, 3}, torch::kFloat32);
    fill_normal(w, 0.0, std::sqrt(2.0 / (spec.in * 9.0)), rng);
    state->layers.push_back({spec.name, w, torch::zeros({spec.out}, torch::kFloat32)});
  }
  state->backend_id = "random:" + std::to_string(seed);
  state->normalize_input = false;
  return PerceptualExtractor(std::move(state));
}

PerceptualExtractor PerceptualExtractor::pretrained(const std::filesystem::path& weights) {
  auto archive = Archive::load(weights);
  archive.expect_kind("perceptual_weights");
  auto state = std::make_shared<State>();
  for (const auto& spec : kLayers) {
    auto w = archive.get(std::string(spec.name) + ".weight").to(torch::kFloat32);
    auto b = archive.get(std::string(spec.name) + ".bias").to(torch::kFloat32);
    if (w.sizes() != torch::IntArrayRef({spec.out, spec.in, 3, 3}) || b.sizes() != torch::IntArrayRef({spec.out})) {
      throw ShapeError(std::string("perceptual: bad weight shape for ") + spec.name);
    }
    state->layers.push_back({spec.name, w, b});
  }
  state->backend_id = "pretrained:" + sha256_file(weights).substr(0, 16);
  state->normalize_input = true;
  return PerceptualExtractor(std::move(state));
}

PerceptualExtractor PerceptualExtractor::from_spec(std::string_view spec) {
  if (spec == "random") return random(0);
  constexpr std::string_view prefix = "pretrained:";
  if (spec.substr(0, prefix.size()) == prefix && spec.size() > prefix.size()) {
    return pretrained(std::filesystem::path(std::string(spec.substr(prefix.size()))));
  }
  throw ConfigError("perceptual: backend must be 'random' or 'pretrained:<path>'");
}

PerceptualExtractor PerceptualExtractor::to(torch::ScalarType dtype) const {
  auto state = std::make_shared<State>(*state_);
  for (auto& l : state->layers) {
    l.weight = l.weight.to(dtype);
    l.bias = l.bias.to(dtype);
  }
  return PerceptualExtractor(std::move(state));
}

FeatureStack PerceptualExtractor::phi(const torch::Tensor& images) const {
  auto x = as_batch(images);
  check_images(x);
  const auto dtype = state_->layers.front().weight.scalar_type();
  x = x.to(dtype);
  if (state_->normalize_input) {
    auto opts = torch::TensorOptions().dtype(dtype);
    auto mean = torch::tensor({0.485, 0.456, 0.406}, opts).view({1, 3, 1, 1});
    auto stdv = torch::tensor({0.229, 0.224, 0.225}, opts).view({1, 3, 1, 1});
    x = (x - mean) / stdv;
  }
  FeatureStack out;
  std::size_t stage = 0;
  for (std::size_t i = 0; i < kLayers.size(); ++i) {
    const auto& l = state_->layers[i];
    x = torch::relu(torch::conv2d(x, l.weight, l.bias, 1, 1));
    if (kLayers[i].pool_after) {
      x = torch::max_pool2d(x, 2, 2);
      out.stages[stage++] = x;
    }
  }
  return out;
}

torch::Tensor PerceptualExtractor::distance(const torch::Tensor& a, const torch::Tensor& b) const {
  auto ba = as_batch(a), bb = as_batch(b);
  if (ba.sizes() != bb.sizes()) throw ShapeError("perceptual_distance: image shapes differ");
  const auto fa = phi(ba);
  const auto fb = phi(bb);
  auto total = torch::zeros({}, fa.stages[0].options());
  for (std::size_t s = 0; s < 3; ++s) total = total + (fa.stages[s] - fb.stages[s]).pow(2).mean();
  return total;
}

void PerceptualExtractor::save_weights(const std::filesystem::path& path) const {
  Archive a("perceptual_weights");
  for (const auto& l : state_->layers) {
    a.put(l.name + ".weight", l.weight.to(torch::kFloat32));
    a.put(l.name + ".bias", l.bias.to(torch::kFloat32));
  }
  a.save(path);
}

double perceptual_distance(const PerceptualExtractor& phi, const torch::Tensor& a, const torch::Tensor& b) {
  torch::NoGradGuard no_grad;
  return phi.distance(a, b).item<double>();
}

}  // namespace avsynth
