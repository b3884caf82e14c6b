#pragma once

// Brute-force reference computations for the test suites. Everything here is
// written with plain loops over std::vector<double> and shares no code with
// the library beyond reading tensors.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace oracle {

inline std::vector<double> to_vec(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous();
  return std::vector<double>(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
}

// |X[k]| for k = 0..max_bin of an N-point DFT of x (N = x.size()).
inline std::vector<double> dft_magnitudes(const std::vector<double>& x, std::size_t max_bin) {
  const std::size_t n = x.size();
  std::vector<double> mag(max_bin + 1);
  for (std::size_t k = 0; k <= max_bin; ++k) {
    std::complex<double> acc = 0.0;
    const double w = -2.0 * std::numbers::pi / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = w * static_cast<double>((k * i) % n);
      acc += x[i] * std::complex<double>(std::cos(a), std::sin(a));
    }
    mag[k] = std::abs(acc);
  }
  return mag;
}

// HTK mel via the natural-log form 1127 ln(1 + f / 700).
inline double mel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }
inline double inv_mel(double m) { return 700.0 * std::expm1(m / 1127.0); }

struct MelSetup {
  int sample_rate = 16000;
  int frame_rate = 30;
  int n_mels = 40;
  int fft_size = 1024;
  int window = 704;
  double floor = 1e-10;
};

inline std::vector<double> mel_edges(const MelSetup& s) {
  std::vector<double> e;
  const double top = mel(s.sample_rate / 2.0);
  for (int i = 0; i < s.n_mels + 2; ++i) e.push_back(inv_mel(top * i / (s.n_mels + 1)));
  return e;
}

// One log-mel row computed directly from the definition: the window starts at
// floor(t * sr / fps), a symmetric Hann taper, zero padding to fft_size, a
// naive DFT power spectrum, triangular filters on the bin frequencies.
inline std::vector<double> log_mel_row(const std::vector<double>& x, std::int64_t t, const MelSetup& s) {
  const std::int64_t start = (t * s.sample_rate) / s.frame_rate;
  std::vector<double> frame(static_cast<std::size_t>(s.fft_size), 0.0);
  for (int i = 0; i < s.window; ++i) {
    const std::int64_t k = start + i;
    if (k >= static_cast<std::int64_t>(x.size())) break;
    const double hann = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / (s.window - 1)));
    frame[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(k)] * hann;
  }
  const auto mag = dft_magnitudes(frame, static_cast<std::size_t>(s.fft_size / 2));
  const auto edges = mel_edges(s);
  std::vector<double> row(static_cast<std::size_t>(s.n_mels));
  for (int m = 0; m < s.n_mels; ++m) {
    double e = 0.0;
    for (int k = 0; k <= s.fft_size / 2; ++k) {
      const double f = static_cast<double>(k) * s.sample_rate / s.fft_size;
      double w = 0.0;
      if (f > edges[m] && f <= edges[m + 1]) w = (f - edges[m]) / (edges[m + 1] - edges[m]);
      if (f > edges[m + 1] && f < edges[m + 2]) w = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
      e += w * mag[static_cast<std::size_t>(k)] * mag[static_cast<std::size_t>(k)];
    }
    row[static_cast<std::size_t>(m)] = std::log(std::max(e, s.floor));
  }
  return row;
}

// Two-pass population mean and standard deviation per column.
inline void column_stats(const std::vector<std::vector<double>>& rows, std::vector<double>& mean,
                         std::vector<double>& stddev) {
  const std::size_t d = rows.front().size();
  mean.assign(d, 0.0);
  stddev.assign(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
  for (auto& m : mean) m /= static_cast<double>(rows.size());
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) stddev[j] += (r[j] - mean[j]) * (r[j] - mean[j]);
  for (auto& s : stddev) s = std::sqrt(s / static_cast<double>(rows.size()));
}

inline std::vector<std::vector<double>> to_rows(const torch::Tensor& m) {
  auto c = m.to(torch::kFloat64).contiguous();
  std::vector<std::vector<double>> out(static_cast<std::size_t>(c.size(0)));
  auto a = c.accessor<double, 2>();
  for (std::int64_t i = 0; i < c.size(0); ++i)
    for (std::int64_t j = 0; j < c.size(1); ++j) out[static_cast<std::size_t>(i)].push_back(a[i][j]);
  return out;
}

// Dense [C, H, W] image in double precision.
struct Image {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;
  double& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
};

inline Image to_image(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous();
  Image im;
  im.c = static_cast<int>(c.size(0));
  im.h = static_cast<int>(c.size(1));
  im.w = static_cast<int>(c.size(2));
  im.v = to_vec(c);
  return im;
}

// 3x3 convolution, stride 1, zero padding 1, followed by ReLU.
inline Image conv3x3_relu(const Image& in, const std::vector<double>& weight, const std::vector<double>& bias,
                          int out_c) {
  Image out{out_c, in.h, in.w, std::vector<double>(static_cast<std::size_t>(out_c) * in.h * in.w)};
  for (int o = 0; o < out_c; ++o)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        double acc = bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < in.c; ++i)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = y + ky - 1, xx = x + kx - 1;
              if (yy < 0 || yy >= in.h || xx < 0 || xx >= in.w) continue;
              acc += weight[((static_cast<std::size_t>(o) * in.c + i) * 3 + ky) * 3 + kx] * in.at(i, yy, xx);
            }
        out.at(o, y, x) = std::max(acc, 0.0);
      }
  return out;
}

inline Image maxpool2(const Image& in) {
  Image out{in.c, in.h / 2, in.w / 2, std::vector<double>(static_cast<std::size_t>(in.c) * (in.h / 2) * (in.w / 2))};
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        out.at(c, y, x) = std::max({in.at(c, 2 * y, 2 * x), in.at(c, 2 * y, 2 * x + 1), in.at(c, 2 * y + 1, 2 * x),
                                    in.at(c, 2 * y + 1, 2 * x + 1)});
  return out;
}

// Named conv layers (weight, bias) of the first three VGG-19 blocks.
struct VggWeights {
  std::vector<std::string> names;
  std::vector<std::vector<double>> weights, biases;
  std::vector<int> out_channels;
};

// Pool outputs of the three stages.
inline std::vector<Image> vgg_stages(Image x, const VggWeights& w, bool imagenet_normalize) {
  if (imagenet_normalize) {
    const double mean[3] = {0.485, 0.456, 0.406};
    const double stddev[3] = {0.229, 0.224, 0.225};
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) x.at(c, y, xx) = (x.at(c, y, xx) - mean[c]) / stddev[c];
  }
  const int per_stage[3] = {2, 2, 4};
  std::vector<Image> stages;
  std::size_t layer = 0;
  for (int s = 0; s < 3; ++s) {
    for (int k = 0; k < per_stage[s]; ++k, ++layer) {
      x = conv3x3_relu(x, w.weights[layer], w.biases[layer], w.out_channels[layer]);
    }
    x = maxpool2(x);
    stages.push_back(x);
  }
  return stages;
}

inline double perceptual(const Image& a, const Image& b, const VggWeights& w, bool normalize) {
  const auto sa = vgg_stages(a, w, normalize);
  const auto sb = vgg_stages(b, w, normalize);
  double total = 0.0;
  for (std::size_t s = 0; s < 3; ++s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < sa[s].v.size(); ++i) acc += (sa[s].v[i] - sb[s].v[i]) * (sa[s].v[i] - sb[s].v[i]);
    total += acc / static_cast<double>(sa[s].v.size());
  }
  return total;
}

// Metric references on [C, H, W] images in [0, 255].
inline double mse(const Image& a, const Image& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) acc += (a.v[i] - b.v[i]) * (a.v[i] - b.v[i]);
  return acc / static_cast<double>(a.v.size());
}

inline double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m < 1e-10) return 100.0;
  return 10.0 * std::log10(255.0 * 255.0 / m);
}

inline std::vector<double> luma(const Image& a) {
  std::vector<double> y(static_cast<std::size_t>(a.h) * a.w);
  for (int r = 0; r < a.h; ++r)
    for (int c = 0; c < a.w; ++c) {
      y[static_cast<std::size_t>(r) * a.w + c] =
          a.c == 1 ? a.at(0, r, c) : 0.299 * a.at(0, r, c) + 0.587 * a.at(1, r, c) + 0.114 * a.at(2, r, c);
    }
  return y;
}

// Windowed SSIM with an 11x11 Gaussian (sigma 1.5) evaluated at every
// position where the window fits, statistics computed directly per window.
// Images smaller than 11 pixels use a window clipped to the image size.
inline double ssim(const Image& a, const Image& b) {
  const auto ya = luma(a), yb = luma(b);
  const int win_h = std::min(11, a.h), win_w = std::min(11, a.w);
  auto kernel1d = [](int n) {
    std::vector<double> k(static_cast<std::size_t>(n));
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = i - (n - 1) / 2.0;
      k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      s += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= s;
    return k;
  };
  const auto ky = kernel1d(win_h), kx = kernel1d(win_w);
  const double c1 = (0.01 * 255.0) * (0.01 * 255.0), c2 = (0.03 * 255.0) * (0.03 * 255.0);
  double total = 0.0;
  int count = 0;
  for (int r = 0; r + win_h <= a.h; ++r)
    for (int c = 0; c + win_w <= a.w; ++c) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < win_h; ++i)
        for (int j = 0; j < win_w; ++j) {
          const double w = ky[static_cast<std::size_t>(i)] * kx[static_cast<std::size_t>(j)];
          const double va = ya[static_cast<std::size_t>(r + i) * a.w + c + j];
          const double vb = yb[static_cast<std::size_t>(r + i) * a.w + c + j];
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / count;
}

// Central finite differences of `f` with respect to sampled entries of each
// tensor in `params` (float64, modified in place and restored), compared with
// the analytic gradients already stored in `grads`. Returns the largest
// relative error max|a - n| / max(|a|, |n|, floor) over the probes.
inline double gradient_check(const std::function<double()>& f, std::vector<torch::Tensor> params,
                             const std::vector<torch::Tensor>& grads, int probes_per_tensor, std::uint64_t seed,
                             double eps = 1e-6, double floor = 1e-7) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  torch::NoGradGuard guard;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto flat = params[p].view({-1});
    auto g = grads[p].reshape({-1});
    const auto n = flat.numel();
    const int probes = static_cast<int>(std::min<std::int64_t>(probes_per_tensor, n));
    for (int k = 0; k < probes; ++k) {
      const auto i = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(n));
      const double orig = flat[i].item<double>();
      flat[i] = orig + eps;
      const double up = f();
      flat[i] = orig - eps;
      const double down = f();
      flat[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = g[i].item<double>();
      const double scale = std::max({std::abs(numeric), std::abs(analytic), floor});
      worst = std::max(worst, std::abs(numeric - analytic) / scale);
    }
  }
  return worst;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("avsynth_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle
