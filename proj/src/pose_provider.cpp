#include "avsynth/pose_provider.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "avsynth/error.hpp"
#include "avsynth/image_io.hpp"
#include "avsynth/rng.hpp"

namespace avsynth {
namespace {

// Figure geometry as fractions of the image size.
constexpr double kTorsoHalfWidth = 0.11;
constexpr double kTorsoHalfHeight = 0.17;
constexpr double kShoulderDx = 0.13;
constexpr double kShoulderDy = 0.14;
constexpr double kUpperArmLength = 0.17;
constexpr double kForearmLength = 0.15;
constexpr double kLimbRadius = 0.035;
constexpr double kNeckLength = 0.12;
constexpr double kHeadRadius = 0.08;

struct Grid {
  torch::Tensor x;  // [S, S] pixel-centre x coordinates
  torch::Tensor y;
};

Grid pixel_grid(int size) {
  auto coords = torch::arange(size, torch::kFloat64) + 0.5;
  auto mesh = torch::meshgrid({coords, coords}, "ij");
  return {mesh[1], mesh[0]};
}

torch::Tensor capsule(const Grid& g, double x0, double y0, double x1, double y1, double r) {
  const double dx = x1 - x0, dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  auto t = ((g.x - x0) * dx + (g.y - y0) * dy) / (len2 > 0.0 ? len2 : 1.0);
  t = t.clamp(0.0, 1.0);
  auto px = x0 + t * dx - g.x;
  auto py = y0 + t * dy - g.y;
  return px * px + py * py <= r * r;
}

// Segment label per pixel, -1 background. Later segments overwrite earlier
// ones: arms, then torso, then head.
torch::Tensor label_map(const FigureSpec& spec, int size) {
  spec.validate();
  const double s = size;
  const auto g = pixel_grid(size);
  const double cx = spec.torso_x * s, cy = spec.torso_y * s;
  auto labels = torch::full({size, size}, -1, torch::kInt64);
  auto paint = [&](const torch::Tensor& mask, int segment) {
    labels = torch::where(mask, torch::full_like(labels, segment), labels);
  };

  const double r = kLimbRadius * s;
  for (int side = 0; side < 2; ++side) {
    const double sign = side == 0 ? -1.0 : 1.0;  // left arm opens toward -x
    const double shoulder = spec.angles[side == 0 ? kLeftShoulder : kRightShoulder];
    const double elbow = spec.angles[side == 0 ? kLeftElbow : kRightElbow];
    const double sx = cx + sign * kShoulderDx * s, sy = cy - kShoulderDy * s;
    const double ex = sx + sign * std::sin(shoulder) * kUpperArmLength * s;
    const double ey = sy + std::cos(shoulder) * kUpperArmLength * s;
    const double hx = ex + sign * std::sin(shoulder + elbow) * kForearmLength * s;
    const double hy = ey + std::cos(shoulder + elbow) * kForearmLength * s;
    paint(capsule(g, sx, sy, ex, ey, r), side == 0 ? kLeftUpperArm : kRightUpperArm);
    paint(capsule(g, ex, ey, hx, hy, r), side == 0 ? kLeftForearm : kRightForearm);
  }

  paint(((g.x - cx).abs() <= kTorsoHalfWidth * s) & ((g.y - cy).abs() <= kTorsoHalfHeight * s), kTorso);

  const double tilt = spec.angles[kHeadTilt];
  const double neck_y = cy - kTorsoHalfHeight * s;
  const double head_x = cx + std::sin(tilt) * kNeckLength * s;
  const double head_y = neck_y - std::cos(tilt) * kNeckLength * s;
  paint(capsule(g, head_x, head_y, head_x, head_y, kHeadRadius * s), kHead);
  return labels;
}

torch::Tensor palette_tensor() {
  const auto& p = segment_palette();
  auto t = torch::empty({kNumSegments, 3}, torch::kFloat32);
  for (int k = 0; k < kNumSegments; ++k) {
    for (int c = 0; c < 3; ++c) t[k][c] = p[k][c];
  }
  return t;
}

// Palette lookup for a label map; background stays 0.
torch::Tensor colorize(const torch::Tensor& labels) {
  auto table = torch::cat({torch::zeros({1, 3}, torch::kFloat32), palette_tensor()}, 0);
  auto rgb = table.index_select(0, (labels + 1).reshape({-1})).reshape({labels.size(0), labels.size(1), 3});
  return rgb.permute({2, 0, 1}).contiguous();
}

void check_frames(const torch::Tensor& frames) {
  if (frames.dim() != 4 || frames.size(1) != 3 || frames.size(0) < 1) {
    throw ShapeError("pose provider: expected non-empty [N, 3, S, S] frames");
  }
}

}  // namespace

void FigureSpec::validate() const {
  for (int j = 0; j < kNumJoints; ++j) {
    if (!(angles[j] >= kJointLimits[j].lo && angles[j] <= kJointLimits[j].hi)) {
      throw ConfigError("figure: joint " + std::to_string(j) + " angle out of range");
    }
  }
  if (!(torso_x >= kTorsoMin && torso_x <= kTorsoMax && torso_y >= kTorsoMin && torso_y <= kTorsoMax)) {
    throw ConfigError("figure: torso position outside the frame band");
  }
}

const std::array<std::array<float, 3>, kNumSegments>& segment_palette() {
  static const std::array<std::array<float, 3>, kNumSegments> palette{{
      {0.25f, 0.75f, 0.30f},  // left upper arm
      {0.20f, 0.55f, 0.85f},  // left forearm
      {0.75f, 0.35f, 0.85f},  // right upper arm
      {0.30f, 0.85f, 0.85f},  // right forearm
      {0.85f, 0.25f, 0.25f},  // torso
      {0.95f, 0.85f, 0.35f},  // head
  }};
  return palette;
}

torch::Tensor render_synthetic_pose(const FigureSpec& spec, int size) {
  if (size < 8) throw ConfigError("render: image size must be >= 8");
  return colorize(label_map(spec, size));
}

torch::Tensor render_synthetic_frame(const FigureSpec& spec, int size) {
  if (size < 8) throw ConfigError("render: image size must be >= 8");
  const auto labels = label_map(spec, size);
  const auto g = pixel_grid(size);
  const double freq = 2.0 * std::numbers::pi * 6.0 / size;  // six texture periods across the frame
  auto shade = (0.78 + 0.22 * (0.5 + 0.5 * torch::sin(freq * g.x) * torch::sin(freq * g.y))).to(torch::kFloat32);
  auto background = (0.40 + 0.10 * g.y / size).to(torch::kFloat32).unsqueeze(0).expand({3, size, size});
  auto figure = colorize(labels) * shade.unsqueeze(0);
  auto mask = (labels >= 0).unsqueeze(0).expand({3, size, size});
  return torch::where(mask, figure, background).contiguous();
}

std::array<double, 2> nonzero_centroid(const torch::Tensor& image) {
  if (image.dim() != 3) throw ShapeError("centroid: expected [C, H, W] image");
  auto mask = (image.abs().sum(0) > 0).to(torch::kFloat64);
  const double count = mask.sum().item<double>();
  if (count == 0.0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const auto g = pixel_grid(static_cast<int>(image.size(1)));
  if (image.size(1) != image.size(2)) {
    auto xs = torch::arange(image.size(2), torch::kFloat64) + 0.5;
    auto ys = torch::arange(image.size(1), torch::kFloat64) + 0.5;
    return {(mask.sum(0) * xs).sum().item<double>() / count, (mask.sum(1) * ys).sum().item<double>() / count};
  }
  return {(mask * g.x).sum().item<double>() / count, (mask * g.y).sum().item<double>() / count};
}

torch::Tensor SyntheticPoseProvider::segment_labels(const torch::Tensor& frames) {
  check_frames(frames);
  // Nearest chromaticity among grey (background) and the segment palette.
  auto classes = torch::cat({torch::ones({1, 3}, torch::kFloat32), palette_tensor()}, 0);
  classes = classes / classes.norm(2, 1, true);
  auto x = frames.to(torch::kFloat32);
  auto unit = x / x.norm(2, 1, true).clamp_min(1e-6);
  auto scores = torch::einsum("nchw,kc->nkhw", {unit, classes});
  return scores.argmax(1) - 1;
}

torch::Tensor SyntheticPoseProvider::poses_from_frames(const torch::Tensor& frames) const {
  auto labels = segment_labels(frames);
  std::vector<torch::Tensor> out;
  out.reserve(static_cast<std::size_t>(labels.size(0)));
  for (std::int64_t i = 0; i < labels.size(0); ++i) out.push_back(colorize(labels[i]));
  return torch::stack(out);
}

std::array<double, 2> SyntheticPoseProvider::detect_torso(const torch::Tensor& frame) {
  auto labels = segment_labels(frame.unsqueeze(0))[0];
  auto mask = (labels == kTorso).unsqueeze(0).to(torch::kFloat32);
  return nonzero_centroid(mask);
}

torch::Tensor PrecomputedPoseProvider::poses_from_frames(const torch::Tensor& frames) const {
  check_frames(frames);
  auto poses = read_frame_dir(dir_);
  if (poses.size(0) != frames.size(0)) {
    throw ShapeError("precomputed poses: " + std::to_string(poses.size(0)) + " pose images for " +
                     std::to_string(frames.size(0)) + " frames");
  }
  if (poses.size(2) != frames.size(2) || poses.size(3) != frames.size(3)) {
    std::vector<torch::Tensor> resized;
    for (std::int64_t i = 0; i < poses.size(0); ++i) resized.push_back(prepare_frame(poses[i], static_cast<int>(frames.size(2))));
    poses = torch::stack(resized);
  }
  return poses;
}

SyntheticDataset synthesize_lecture_dataset(std::uint64_t seed, std::int64_t n_frames, const SyntheticDatasetConfig& cfg) {
  if (n_frames < 1) throw ConfigError("synthetic dataset: n_frames must be >= 1");
  if (cfg.frame_rate <= 0 || cfg.sample_rate <= 0) throw ConfigError("synthetic dataset: rates must be positive");
  Rng rng(seed);
  constexpr int kHarmonics = 3;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;

  // One smooth trajectory per degree of freedom: joints, then torso x and y.
  struct Track {
    double centre, amplitude;
    std::array<double, kHarmonics> freq, phase, weight;
    double at(double t) const {
      double v = 0.0;
      for (int k = 0; k < kHarmonics; ++k) v += weight[k] * std::sin(kTwoPi * freq[k] * t + phase[k]);
      return centre + amplitude * v;
    }
  };
  auto make_track = [&](double centre, double amplitude, double max_freq) {
    Track tr{centre, amplitude, {}, {}, {}};
    double total = 0.0;
    for (int k = 0; k < kHarmonics; ++k) {
      tr.freq[k] = rng.uniform(0.05, max_freq);
      tr.phase[k] = rng.uniform(0.0, kTwoPi);
      tr.weight[k] = rng.uniform(0.2, 1.0);
      total += tr.weight[k];
    }
    for (auto& w : tr.weight) w /= total;
    return tr;
  };
  std::vector<Track> tracks;
  for (int j = 0; j < kNumJoints; ++j) {
    const auto [lo, hi] = kJointLimits[j];
    const double span = hi - lo;
    const double centre = j == kHeadTilt ? 0.0 : lo + 0.35 * span;
    tracks.push_back(make_track(centre, j == kHeadTilt ? 0.35 : 0.3 * span, 0.5));
  }
  tracks.push_back(make_track(0.5, 0.03, 0.2));
  tracks.push_back(make_track(0.6, 0.02, 0.2));

  auto spec_at = [&](double t) {
    FigureSpec s;
    for (int j = 0; j < kNumJoints; ++j) s.angles[j] = std::clamp(tracks[j].at(t), kJointLimits[j].lo, kJointLimits[j].hi);
    s.torso_x = std::clamp(tracks[kNumJoints].at(t), kTorsoMin, kTorsoMax);
    s.torso_y = std::clamp(tracks[kNumJoints + 1].at(t), kTorsoMin, kTorsoMax);
    return s;
  };

  SyntheticDataset ds;
  std::vector<torch::Tensor> frames, poses;
  for (std::int64_t i = 0; i < n_frames; ++i) {
    ds.specs.push_back(spec_at(static_cast<double>(i) / cfg.frame_rate));
    frames.push_back(render_synthetic_frame(ds.specs.back(), cfg.image_size));
    poses.push_back(render_synthetic_pose(ds.specs.back(), cfg.image_size));
  }
  ds.frames = torch::stack(frames);
  ds.poses = torch::stack(poses);

  // Audio: one carrier per joint whose amplitude follows the normalized joint
  // angle, plus broadband noise scaled by the figure's angular speed.
  const std::array<double, kNumJoints> carriers{330.0, 740.0, 1250.0, 2100.0, 3300.0};
  std::array<double, kNumJoints> carrier_phase{};
  for (auto& p : carrier_phase) p = rng.uniform(0.0, kTwoPi);
  const auto n_samples =
      (2 * n_frames * cfg.sample_rate + cfg.frame_rate) / (2 * static_cast<std::int64_t>(cfg.frame_rate));
  ds.audio.sample_rate = cfg.sample_rate;
  ds.audio.samples.resize(static_cast<std::size_t>(n_samples));
  Rng noise(derive_seed(seed, 99));
  const double dt = 1.0 / cfg.frame_rate;
  for (std::int64_t n = 0; n < n_samples; ++n) {
    const double t = static_cast<double>(n) / cfg.sample_rate;
    const auto s = spec_at(t);
    const auto s_next = spec_at(t + dt);
    double speed = 0.0, v = 0.0;
    for (int j = 0; j < kNumJoints; ++j) {
      const auto [lo, hi] = kJointLimits[j];
      const double level = (s.angles[j] - lo) / (hi - lo);
      v += (0.03 + 0.12 * level) * std::sin(kTwoPi * carriers[j] * t + carrier_phase[j]);
      speed += std::abs(s_next.angles[j] - s.angles[j]);
    }
    v += 0.02 * (0.2 + 5.0 * speed) * noise.normal();
    ds.audio.samples[static_cast<std::size_t>(n)] = std::clamp(v, -1.0, 1.0);
  }
  return ds;
}

}  // namespace avsynth
