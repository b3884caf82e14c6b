#include "avsynth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "avsynth/error.hpp"
#include "avsynth/image_io.hpp"

namespace avsynth {
namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw ShapeError(std::string(what) + ": image shapes differ");
  if (a.numel() == 0) throw ShapeError(std::string(what) + ": empty image");
}

// [H, W] float64 plane; RGB is reduced to luma.
torch::Tensor luma(const torch::Tensor& img) {
  auto x = img.to(torch::kFloat64);
  if (x.dim() == 2) return x.contiguous();
  if (x.dim() == 3 && x.size(0) == 1) return x[0].contiguous();
  if (x.dim() == 3 && x.size(0) == 3) return (0.299 * x[0] + 0.587 * x[1] + 0.114 * x[2]).contiguous();
  throw ShapeError("ssim: expected [H, W], [1, H, W] or [3, H, W]");
}

std::vector<double> gaussian_taps(int n) {
  std::vector<double> g(static_cast<std::size_t>(n));
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = i - (n - 1) / 2.0;
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Valid-mode separable Gaussian filter of an [H, W] plane.
std::vector<double> filter_valid(const std::vector<double>& src, std::int64_t h, std::int64_t w,
                                 const std::vector<double>& gy, const std::vector<double>& gx) {
  const auto ky = static_cast<std::int64_t>(gy.size()), kx = static_cast<std::int64_t>(gx.size());
  const std::int64_t oh = h - ky + 1, ow = w - kx + 1;
  std::vector<double> rows(static_cast<std::size_t>(h * ow), 0.0);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < kx; ++k) acc += gx[k] * src[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh * ow), 0.0);
  for (std::int64_t y = 0; y < oh; ++y) {
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < ky; ++k) acc += gy[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double mse(const torch::Tensor& a, const torch::Tensor& b) {
  check_same_shape(a, b, "mse");
  auto d = a.to(torch::kFloat64) - b.to(torch::kFloat64);
  return (d * d).mean().item<double>();
}

double psnr_from_mse(double m) {
  if (m < 1e-10) return kPsnrCap;
  return 10.0 * std::log10(255.0 * 255.0 / m);
}

double psnr(const torch::Tensor& a, const torch::Tensor& b) { return psnr_from_mse(mse(a, b)); }

double ssim(const torch::Tensor& a, const torch::Tensor& b) {
  check_same_shape(a, b, "ssim");
  auto la = luma(a), lb = luma(b);
  const auto h = la.size(0), w = la.size(1);
  if (h < 1 || w < 1) throw ShapeError("ssim: empty image");

  const auto* pa = la.data_ptr<double>();
  const auto* pb = lb.data_ptr<double>();
  const auto n = static_cast<std::size_t>(h * w);
  std::vector<double> xa(pa, pa + n), xb(pb, pb + n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = xa[i] * xa[i];
    bb[i] = xb[i] * xb[i];
    ab[i] = xa[i] * xb[i];
  }
  const auto gy = gaussian_taps(static_cast<int>(std::min<std::int64_t>(h, kSsimWindow)));
  const auto gx = gaussian_taps(static_cast<int>(std::min<std::int64_t>(w, kSsimWindow)));
  const auto mu_a = filter_valid(xa, h, w, gy, gx);
  const auto mu_b = filter_valid(xb, h, w, gy, gx);
  const auto e_aa = filter_valid(aa, h, w, gy, gx);
  const auto e_bb = filter_valid(bb, h, w, gy, gx);
  const auto e_ab = filter_valid(ab, h, w, gy, gx);

  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
    const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + kC1) * (2.0 * cov + kC2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (var_a + var_b + kC2);
    total += num / den;
  }
  return total / static_cast<double>(mu_a.size());
}

MetricReport compare(const torch::Tensor& a, const torch::Tensor& b) {
  MetricReport r;
  r.mse = mse(a, b);
  r.psnr = psnr_from_mse(r.mse);
  r.ssim = ssim(a, b);
  return r;
}

SetReport evaluate_set(const std::filesystem::path& pred_dir, const std::filesystem::path& truth_dir) {
  const auto pred = list_image_files(pred_dir);
  const auto truth = list_image_files(truth_dir);
  if (pred.size() != truth.size()) {
    throw ShapeError("evaluate_set: " + std::to_string(pred.size()) + " predicted vs " +
                     std::to_string(truth.size()) + " ground-truth frames");
  }
  if (pred.empty()) throw ShapeError("evaluate_set: no frames found");

  SetReport report;
  MetricReport sum{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].filename() != truth[i].filename()) {
      throw ShapeError("evaluate_set: manifest mismatch at " + pred[i].filename().string());
    }
    const auto r = compare(read_image_u8(pred[i]), read_image_u8(truth[i]));
    report.frames.push_back(pred[i].filename().string());
    report.per_frame.push_back(r);
    sum.mse += r.mse;
    sum.psnr += r.psnr;
    sum.ssim += r.ssim;
  }
  const double n = static_cast<double>(pred.size());
  report.mean = {sum.mse / n, sum.psnr / n, sum.ssim / n};
  return report;
}

void write_report_csv(const std::filesystem::path& path, const SetReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "frame,mse,psnr,ssim\n" << std::setprecision(10);
  for (std::size_t i = 0; i < report.frames.size(); ++i) {
    const auto& r = report.per_frame[i];
    out << report.frames[i] << ',' << r.mse << ',' << r.psnr << ',' << r.ssim << '\n';
  }
  out << "mean," << report.mean.mse << ',' << report.mean.psnr << ',' << report.mean.ssim << '\n';
}

}  // namespace avsynth
