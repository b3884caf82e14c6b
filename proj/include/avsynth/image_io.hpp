#pragma once

// Image and frame-directory I/O.
//
// In memory, images are float32 [3, H, W] tensors in [0, 1] (RGB), and
// sequences are [N, 3, H, W]. On disk a frame directory holds lossless PNGs
// named frame_%06d.png plus manifest.json:
//
//   { "format_version": 1, "kind": "frames" | "poses", "fps": 30,
//     "count": N, "width": W, "height": H, "synthetic": true,
//     "checksum": sha256 over the concatenated PNG digests,
//     "source_checksum": optional, "bundle_checksum": optional }

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace avsynth {

inline constexpr int kFrameDirFormatVersion = 1;

torch::Tensor read_image(const std::filesystem::path& path);
// [3, H, W] uint8 values as read from disk.
torch::Tensor read_image_u8(const std::filesystem::path& path);
// Values are clamped to [0, 1] and rounded to 8 bits.
void write_image(const std::filesystem::path& path, const torch::Tensor& image);

torch::Tensor resize_bilinear(const torch::Tensor& image, int width, int height);
// Crop of size x size starting at column floor((W - size) / 2) and row
// floor((H - size) / 2).
torch::Tensor center_crop(const torch::Tensor& image, int size);
// Resize to height `size` (width scaled proportionally and floored) and crop the
// central size x size square. A 1920x1080 frame becomes 455x256, then columns
// 99..354.
torch::Tensor prepare_frame(const torch::Tensor& image, int size);

std::string frame_file_name(std::int64_t index);
// Sorted image files (png, ppm, jpg) in a directory.
std::vector<std::filesystem::path> list_image_files(const std::filesystem::path& dir);

struct FrameManifest {
  std::string kind = "frames";
  int fps = 30;
  std::int64_t count = 0;
  int width = 0;
  int height = 0;
  std::string checksum;
  std::optional<std::string> source_checksum;
  std::optional<std::string> bundle_checksum;

  nlohmann::json to_json() const;
  static FrameManifest from_json(const nlohmann::json& j);
};

// Writes frames as PNGs plus manifest.json; returns the manifest.
FrameManifest write_frame_dir(const std::filesystem::path& dir, const torch::Tensor& frames,
                              FrameManifest manifest);
torch::Tensor read_frame_dir(const std::filesystem::path& dir);
std::optional<FrameManifest> read_manifest(const std::filesystem::path& dir);
// Digest over the PNG files of a directory, in name order.
std::string frame_dir_checksum(const std::filesystem::path& dir);

}  // namespace avsynth
