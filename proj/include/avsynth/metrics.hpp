#pragma once

// Frame quality metrics on the 8-bit scale. Images are [C, H, W] or [H, W]
// tensors with values in [0, 255]; any floating or integer dtype is accepted.

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace avsynth {

inline constexpr double kPsnrCap = 100.0;

struct MetricReport {
  double mse = 0.0;
  double psnr = kPsnrCap;
  double ssim = 1.0;
};

double mse(const torch::Tensor& a, const torch::Tensor& b);
// 10 log10(255^2 / mse), or kPsnrCap when mse < 1e-10.
double psnr(const torch::Tensor& a, const torch::Tensor& b);
double psnr_from_mse(double mse);
// Gaussian-window SSIM (11x11, sigma 1.5) averaged over all valid window
// positions. RGB input is reduced to Rec.601 luma first. Along an axis
// shorter than 11 pixels the window shrinks to the image size.
double ssim(const torch::Tensor& a, const torch::Tensor& b);

MetricReport compare(const torch::Tensor& a, const torch::Tensor& b);

struct SetReport {
  std::vector<std::string> frames;
  std::vector<MetricReport> per_frame;
  MetricReport mean;
};

// Pairs image files by name across the two directories (manifest files are
// ignored). Throws ShapeError when the file lists differ.
SetReport evaluate_set(const std::filesystem::path& pred_dir, const std::filesystem::path& truth_dir);
// Columns frame,mse,psnr,ssim; the final row is labelled "mean".
void write_report_csv(const std::filesystem::path& path, const SetReport& report);

}  // namespace avsynth
