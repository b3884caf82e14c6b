#pragma once

// Fixed convolutional feature extractor used as a perceptual distance.
//
// Topology is the first three blocks of VGG-19:
//
//   conv1_1 (3->64)   conv1_2 (64->64)                         pool1
//   conv2_1 (64->128) conv2_2 (128->128)                       pool2
//   conv3_1 (128->256) conv3_2 conv3_3 conv3_4 (256->256)      pool3
//
// All convolutions are 3x3, stride 1, padding 1, followed by ReLU; pools are
// 2x2 max pools. The three pool outputs form the FeatureStack, so a 256x256
// input gives 64x128x128, 128x64x64 and 256x32x32 maps.
//
// Two backends:
//   - "pretrained:<path>": weights from an Archive of kind "perceptual_weights"
//     with arrays conv1_1.weight, conv1_1.bias, ..., conv3_4.bias (shapes as
//     in torchvision's vgg19().features). Inputs are normalized with the
//     ImageNet channel mean/std before the first convolution.
//   - "random": the same topology with He-normal weights drawn from seed 0 and
//     zero biases; inputs are used as-is.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace avsynth {

struct FeatureStack {
  std::array<torch::Tensor, 3> stages;
};

class PerceptualExtractor {
 public:
  static PerceptualExtractor random(std::uint64_t seed = 0);
  static PerceptualExtractor pretrained(const std::filesystem::path& weights);
  // "random" or "pretrained:<path>".
  static PerceptualExtractor from_spec(std::string_view spec);

  // images: [3, H, W] or [N, 3, H, W] with H, W multiples of 8.
  FeatureStack phi(const torch::Tensor& images) const;

  // Sum over the three stages of the mean squared difference. Differentiable
  // with respect to both inputs; batched inputs average over the batch.
  torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b) const;

  // Same extractor computing in `dtype` (float32 or float64).
  PerceptualExtractor to(torch::ScalarType dtype) const;

  const std::string& backend_id() const { return state_->backend_id; }
  bool normalizes_input() const { return state_->normalize_input; }

  // Writes the current weights in the pretrained-file layout.
  void save_weights(const std::filesystem::path& path) const;

 private:
  struct Layer {
    std::string name;
    torch::Tensor weight;
    torch::Tensor bias;
  };
  struct State {
    std::vector<Layer> layers;
    std::string backend_id;
    bool normalize_input = false;
  };

  explicit PerceptualExtractor(std::shared_ptr<const State> state) : state_(std::move(state)) {}

  std::shared_ptr<const State> state_;
};

double perceptual_distance(const PerceptualExtractor& phi, const torch::Tensor& a, const torch::Tensor& b);

}  // namespace avsynth
