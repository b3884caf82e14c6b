#pragma once

#include <cstdint>
#include <random>

#include <torch/torch.h>

namespace avsynth {

// Seeded generator used for every stochastic choice in the library
// (initialization, sampling, shuffling). Independent of torch's global RNG so
// concurrently trained models never share state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  std::int64_t index(std::int64_t n) { return std::uniform_int_distribution<std::int64_t>(0, n - 1)(engine_); }
  std::uint64_t next() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Derives an independent stream seed from a base seed and a tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

// In-place fills of an existing tensor (any floating dtype); gradient
// tracking is bypassed.
void fill_uniform(torch::Tensor& t, double lo, double hi, Rng& rng);
void fill_normal(torch::Tensor& t, double mean, double stddev, Rng& rng);

// Fresh float64 tensor of standard normal draws.
torch::Tensor standard_normal(torch::IntArrayRef shape, Rng& rng);

}  // namespace avsynth
