#pragma once

#include <cmath>

#include <torch/torch.h>

#include "avsynth/rng.hpp"

namespace avsynth::detail {

inline std::int64_t fan_in(const torch::Tensor& w) {
  std::int64_t f = 1;
  for (std::int64_t d = 1; d < w.dim(); ++d) f *= w.size(d);
  return f;
}

// He-uniform weights, zero biases, for every parameter of `m`.
inline void he_uniform_init(torch::nn::Module& m, Rng& rng) {
  for (auto& p : m.named_parameters(true)) {
    auto t = p.value();
    if (t.dim() >= 2) {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in(t)));
      fill_uniform(t, -bound, bound, rng);
    } else {
      torch::NoGradGuard no_grad;
      t.zero_();
    }
  }
}

// N(0, stddev) weights, zero biases.
inline void normal_init(torch::nn::Module& m, double stddev, Rng& rng) {
  for (auto& p : m.named_parameters(true)) {
    auto t = p.value();
    if (t.dim() >= 2) {
      fill_normal(t, 0.0, stddev, rng);
    } else {
      torch::NoGradGuard no_grad;
      t.zero_();
    }
  }
}

// Bit-exact copy of every parameter, for unchanged-parameter checks.
inline std::vector<torch::Tensor> snapshot(const torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters(true)) out.push_back(p.detach().clone());
  return out;
}

}  // namespace avsynth::detail
