#include "avsynth/rng.hpp"

#include <vector>

namespace avsynth {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

template <typename Draw>
void fill_with(torch::Tensor& t, Draw draw) {
  torch::NoGradGuard no_grad;
  std::vector<double> values(static_cast<std::size_t>(t.numel()));
  for (auto& v : values) v = draw();
  auto src = torch::from_blob(values.data(), t.sizes(), torch::kFloat64);
  t.copy_(src.to(t.scalar_type()));
}

}  // namespace

void fill_uniform(torch::Tensor& t, double lo, double hi, Rng& rng) {
  fill_with(t, [&] { return rng.uniform(lo, hi); });
}

void fill_normal(torch::Tensor& t, double mean, double stddev, Rng& rng) {
  fill_with(t, [&] { return mean + stddev * rng.normal(); });
}

torch::Tensor standard_normal(torch::IntArrayRef shape, Rng& rng) {
  auto t = torch::empty(shape, torch::kFloat64);
  fill_normal(t, 0.0, 1.0, rng);
  return t;
}

}  // namespace avsynth
