#pragma once

// Pose-image sources.
//
// A pose image is an RGB rendering of body segments with one flat colour per
// segment on an exactly-zero background. PoseProvider turns video frames into
// pose images; two implementations ship with the library:
//
//   SyntheticPoseProvider   segments frames produced by the synthetic
//                           renderer by colour (frames carry textured
//                           versions of the segment palette on a grey
//                           background).
//   PrecomputedPoseProvider replays a directory of pose images produced by an
//                           external estimator (e.g. DensePose renderings).

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "avsynth/audio_features.hpp"

namespace avsynth {

enum Joint : int {
  kHeadTilt = 0,
  kLeftShoulder,
  kLeftElbow,
  kRightShoulder,
  kRightElbow,
  kNumJoints,
};

enum Segment : int {
  kLeftUpperArm = 0,
  kLeftForearm,
  kRightUpperArm,
  kRightForearm,
  kTorso,
  kHead,
  kNumSegments,
};

// Radians. Shoulder angles are measured from hanging straight down, opening
// outward; elbow angles bend the forearm further in the same direction.
struct JointLimits {
  double lo;
  double hi;
};
inline constexpr std::array<JointLimits, kNumJoints> kJointLimits{{
    {-0.5, 0.5},  // head tilt
    {0.0, 2.6},   // left shoulder
    {0.0, 2.4},   // left elbow
    {0.0, 2.6},   // right shoulder
    {0.0, 2.4},   // right elbow
}};

// Torso centre must stay within this band of normalized image coordinates.
inline constexpr double kTorsoMin = 0.25;
inline constexpr double kTorsoMax = 0.75;

struct FigureSpec {
  std::array<double, kNumJoints> angles{};
  double torso_x = 0.5;  // normalized, 0 = left edge
  double torso_y = 0.6;  // normalized, 0 = top edge

  // Throws ConfigError when an angle or the position is out of range.
  void validate() const;
};

// Flat RGB colour per segment.
const std::array<std::array<float, 3>, kNumSegments>& segment_palette();

// Flat-coloured pose image [3, size, size] on a zero background.
torch::Tensor render_synthetic_pose(const FigureSpec& spec, int size = 256);
// Textured "camera" frame of the same figure on a grey gradient background.
torch::Tensor render_synthetic_frame(const FigureSpec& spec, int size = 256);

// Centroid (x, y) in pixel units of all non-zero pixels, using pixel centres
// (column + 0.5, row + 0.5). Returns (nan, nan) for an empty image.
std::array<double, 2> nonzero_centroid(const torch::Tensor& image);

class PoseProvider {
 public:
  virtual ~PoseProvider() = default;
  // frames [N, 3, S, S] -> poses [N, 3, S, S]; deterministic.
  virtual torch::Tensor poses_from_frames(const torch::Tensor& frames) const = 0;
  virtual std::string id() const = 0;
};

class SyntheticPoseProvider final : public PoseProvider {
 public:
  torch::Tensor poses_from_frames(const torch::Tensor& frames) const override;
  std::string id() const override { return "synthetic"; }

  // Segment label per pixel, [N, S, S] int64, -1 for background.
  static torch::Tensor segment_labels(const torch::Tensor& frames);
  // Torso centre (x, y) in pixel units, from the torso-labelled pixels.
  static std::array<double, 2> detect_torso(const torch::Tensor& frame);
};

class PrecomputedPoseProvider final : public PoseProvider {
 public:
  explicit PrecomputedPoseProvider(std::filesystem::path dir) : dir_(std::move(dir)) {}
  // Pose images are read from disk, brought to the frame size with
  // prepare_frame, and must match the frame count.
  torch::Tensor poses_from_frames(const torch::Tensor& frames) const override;
  std::string id() const override { return "precomputed:" + dir_.string(); }

 private:
  std::filesystem::path dir_;
};

struct SyntheticDataset {
  torch::Tensor frames;  // [N, 3, S, S]
  torch::Tensor poses;   // [N, 3, S, S]
  Waveform audio;        // N / frame_rate seconds at sample_rate
  std::vector<FigureSpec> specs;
};

struct SyntheticDatasetConfig {
  int image_size = 256;
  int frame_rate = 30;
  int sample_rate = 16000;
};

// Smooth figure trajectory (sums of random low-frequency sinusoids per joint
// and for the torso position), textured frames, flat poses, and audio whose
// band energies follow the joint angles plus noise modulated by motion speed.
SyntheticDataset synthesize_lecture_dataset(std::uint64_t seed, std::int64_t n_frames,
                                            const SyntheticDatasetConfig& cfg = {});

}  // namespace avsynth
