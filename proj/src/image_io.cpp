#include "avsynth/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "avsynth/archive.hpp"
#include "avsynth/error.hpp"

namespace avsynth {
namespace {

void check_image(const torch::Tensor& image, const char* what) {
  if (image.dim() != 3 || image.size(0) != 3 || image.size(1) < 1 || image.size(2) < 1) {
    throw ShapeError(std::string(what) + ": expected a [3, H, W] image");
  }
}

// [3, H, W] float in [0,1] -> HxW CV_32FC3 (BGR)
cv::Mat to_mat(const torch::Tensor& image) {
  auto hwc = image.to(torch::kFloat32).flip({0}).permute({1, 2, 0}).contiguous();
  cv::Mat m(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_32FC3, hwc.data_ptr<float>());
  return m.clone();
}

torch::Tensor from_mat(const cv::Mat& m) {
  cv::Mat f;
  m.convertTo(f, CV_32FC3);
  auto t = torch::from_blob(f.data, {f.rows, f.cols, 3}, torch::kFloat32).clone();
  return t.permute({2, 0, 1}).flip({0}).contiguous();
}

}  // namespace

torch::Tensor read_image_u8(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw IoError("cannot read image " + path.string());
  auto t = torch::from_blob(m.data, {m.rows, m.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).flip({0}).contiguous();
}

torch::Tensor read_image(const std::filesystem::path& path) {
  return read_image_u8(path).to(torch::kFloat32).div_(255.0f);
}

void write_image(const std::filesystem::path& path, const torch::Tensor& image) {
  check_image(image, "write_image");
  auto u8 = image.detach().to(torch::kFloat64).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8);
  auto hwc = u8.flip({0}).permute({1, 2, 0}).contiguous();
  cv::Mat m(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr<std::uint8_t>());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
  if (!cv::imwrite(path.string(), m, params)) throw IoError("cannot write image " + path.string());
}

torch::Tensor resize_bilinear(const torch::Tensor& image, int width, int height) {
  check_image(image, "resize_bilinear");
  if (width < 1 || height < 1) throw ConfigError("resize_bilinear: target size must be positive");
  if (image.size(1) == height && image.size(2) == width) return image.to(torch::kFloat32).clone();
  cv::Mat out;
  cv::resize(to_mat(image), out, cv::Size(width, height), 0.0, 0.0, cv::INTER_LINEAR);
  return from_mat(out);
}

torch::Tensor center_crop(const torch::Tensor& image, int size) {
  check_image(image, "center_crop");
  const auto h = image.size(1), w = image.size(2);
  if (h < size || w < size) throw ShapeError("center_crop: image smaller than crop");
  const auto top = (h - size) / 2, left = (w - size) / 2;
  return image.slice(1, top, top + size).slice(2, left, left + size).contiguous();
}

torch::Tensor prepare_frame(const torch::Tensor& image, int size) {
  check_image(image, "prepare_frame");
  const double scale = static_cast<double>(size) / static_cast<double>(image.size(1));
  const int width = std::max(size, static_cast<int>(std::floor(image.size(2) * scale)));
  return center_crop(resize_bilinear(image, width, size), size);
}

std::string frame_file_name(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06lld.png", static_cast<long long>(index));
  return buf;
}

std::vector<std::filesystem::path> list_image_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".ppm" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

nlohmann::json FrameManifest::to_json() const {
  nlohmann::json j{{"format_version", kFrameDirFormatVersion},
                   {"kind", kind},
                   {"fps", fps},
                   {"count", count},
                   {"width", width},
                   {"height", height},
                   {"synthetic", true},
                   {"checksum", checksum}};
  if (source_checksum) j["source_checksum"] = *source_checksum;
  if (bundle_checksum) j["bundle_checksum"] = *bundle_checksum;
  return j;
}

FrameManifest FrameManifest::from_json(const nlohmann::json& j) {
  if (j.value("format_version", 0) != kFrameDirFormatVersion) {
    throw IoError("frame manifest: unsupported format version");
  }
  FrameManifest m;
  m.kind = j.value("kind", "frames");
  m.fps = j.value("fps", 30);
  m.count = j.value("count", std::int64_t{0});
  m.width = j.value("width", 0);
  m.height = j.value("height", 0);
  m.checksum = j.value("checksum", "");
  if (j.contains("source_checksum")) m.source_checksum = j["source_checksum"].get<std::string>();
  if (j.contains("bundle_checksum")) m.bundle_checksum = j["bundle_checksum"].get<std::string>();
  return m;
}

std::string frame_dir_checksum(const std::filesystem::path& dir) {
  std::string digests;
  for (const auto& f : list_image_files(dir)) digests += f.filename().string() + ":" + sha256_file(f) + "\n";
  return sha256_hex(digests);
}

FrameManifest write_frame_dir(const std::filesystem::path& dir, const torch::Tensor& frames,
                              FrameManifest manifest) {
  if (frames.dim() != 4 || frames.size(1) != 3 || frames.size(0) < 1) {
    throw ShapeError("write_frame_dir: expected non-empty [N, 3, H, W] frames");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
  for (const auto& old : list_image_files(dir)) std::filesystem::remove(old);
  for (std::int64_t i = 0; i < frames.size(0); ++i) write_image(dir / frame_file_name(i), frames[i]);

  manifest.count = frames.size(0);
  manifest.height = static_cast<int>(frames.size(2));
  manifest.width = static_cast<int>(frames.size(3));
  manifest.checksum = frame_dir_checksum(dir);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << manifest.to_json().dump(2) << '\n';
  return manifest;
}

torch::Tensor read_frame_dir(const std::filesystem::path& dir) {
  const auto files = list_image_files(dir);
  if (files.empty()) throw IoError("no image files in " + dir.string());
  std::vector<torch::Tensor> frames;
  frames.reserve(files.size());
  for (const auto& f : files) {
    frames.push_back(read_image(f));
    if (frames.back().sizes() != frames.front().sizes()) throw ShapeError("frame sizes differ in " + dir.string());
  }
  return torch::stack(frames);
}

std::optional<FrameManifest> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) return std::nullopt;
  try {
    return FrameManifest::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
  }
}

}  // namespace avsynth
