#include "avsynth/audio_features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "avsynth/archive.hpp"
#include "avsynth/error.hpp"

namespace avsynth {
namespace {

void check_waveform(const Waveform& w) {
  if (w.sample_rate <= 0) throw ConfigError("waveform: sample rate must be positive");
  if (w.samples.empty()) throw ConfigError("waveform: no samples");
  for (double s : w.samples) {
    if (!std::isfinite(s)) throw ConfigError("waveform: non-finite sample");
  }
}

double kaiser(double x, double beta) {
  // x in [-1, 1]
  const double r = 1.0 - x * x;
  if (r <= 0.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(r)) / std::cyl_bessel_i(0.0, beta);
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace

void FeatureConfig::validate() const {
  if (sample_rate <= 0 || frame_rate <= 0) throw ConfigError("features: rates must be positive");
  if (n_mels < 1) throw ConfigError("features: n_mels must be >= 1");
  if (window_seconds <= 0.0) throw ConfigError("features: window length must be positive");
  if (fft_size < window_samples()) throw ConfigError("features: fft_size shorter than the analysis window");
  if (!(log_floor > 0.0)) throw ConfigError("features: log_floor must be positive");
}

std::int64_t FeatureConfig::window_samples() const {
  return static_cast<std::int64_t>(std::llround(window_seconds * sample_rate));
}

std::int64_t FeatureConfig::row_start(std::int64_t row) const {
  return row * sample_rate / frame_rate;
}

std::int64_t FeatureConfig::num_rows(std::int64_t num_samples) const {
  return (2 * num_samples * frame_rate + sample_rate) / (2 * static_cast<std::int64_t>(sample_rate));
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_center_frequencies(const FeatureConfig& cfg) {
  const double top = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> centers(static_cast<std::size_t>(cfg.n_mels));
  for (int m = 0; m < cfg.n_mels; ++m) centers[m] = mel_to_hz(top * (m + 1) / (cfg.n_mels + 1));
  return centers;
}

torch::Tensor mel_filterbank(const FeatureConfig& cfg) {
  cfg.validate();
  const int bins = cfg.fft_size / 2 + 1;
  const double top = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels + 2));
  for (int i = 0; i < cfg.n_mels + 2; ++i) edges[i] = mel_to_hz(top * i / (cfg.n_mels + 1));

  auto bank = torch::zeros({cfg.n_mels, bins}, torch::kFloat64);
  auto acc = bank.accessor<double, 2>();
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
      const double rise = (f - lo) / (mid - lo);
      const double fall = (hi - f) / (hi - mid);
      acc[m][k] = std::max(0.0, std::min(rise, fall));
    }
  }
  return bank;
}

Waveform resample(const Waveform& w, int target_rate) {
  check_waveform(w);
  if (target_rate <= 0) throw ConfigError("resample: target rate must be positive");
  if (target_rate == w.sample_rate) return w;

  const auto n_in = static_cast<std::int64_t>(w.samples.size());
  const std::int64_t src = w.sample_rate;
  const std::int64_t dst = target_rate;
  const std::int64_t n_out = (2 * n_in * dst + src) / (2 * src);

  // Cutoff in cycles per input sample, just below the lower Nyquist.
  const double cutoff = 0.5 * std::min(1.0, static_cast<double>(dst) / static_cast<double>(src)) * 0.97;
  constexpr double kZeroCrossings = 16.0;
  constexpr double kBeta = 8.6;
  const double half_width = kZeroCrossings / (2.0 * cutoff);

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (std::int64_t n = 0; n < n_out; ++n) {
    const double t = static_cast<double>(n) * static_cast<double>(src) / static_cast<double>(dst);
    const auto first = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(t - half_width)));
    const auto last = std::min<std::int64_t>(n_in - 1, static_cast<std::int64_t>(std::floor(t + half_width)));
    double acc = 0.0, norm = 0.0;
    for (std::int64_t k = first; k <= last; ++k) {
      const double d = t - static_cast<double>(k);
      const double tap = sinc(2.0 * cutoff * d) * kaiser(d / half_width, kBeta);
      acc += tap * w.samples[static_cast<std::size_t>(k)];
      norm += tap;
    }
    out.samples[static_cast<std::size_t>(n)] = norm != 0.0 ? acc / norm : 0.0;
  }
  return out;
}

AudioFeatureSequence extract_log_mel(const Waveform& w, const FeatureConfig& cfg) {
  cfg.validate();
  check_waveform(w);
  if (w.sample_rate != cfg.sample_rate) {
    throw ConfigError("extract_log_mel: waveform rate " + std::to_string(w.sample_rate) +
                      " does not match configured rate " + std::to_string(cfg.sample_rate));
  }
  const auto n = static_cast<std::int64_t>(w.samples.size());
  const auto win = cfg.window_samples();
  if (n < win) throw ConfigError("extract_log_mel: audio shorter than one analysis window");

  const auto rows = cfg.num_rows(n);
  // Symmetric Hann window.
  std::vector<double> hann(static_cast<std::size_t>(win));
  for (std::int64_t i = 0; i < win; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / static_cast<double>(win - 1));
  }

  auto frames = torch::zeros({rows, cfg.fft_size}, torch::kFloat64);
  auto fa = frames.accessor<double, 2>();
  for (std::int64_t t = 0; t < rows; ++t) {
    const auto start = cfg.row_start(t);
    for (std::int64_t i = 0; i < win && start + i < n; ++i) {
      fa[t][i] = w.samples[static_cast<std::size_t>(start + i)] * hann[i];
    }
  }
  auto spectrum = torch::fft::rfft(frames, cfg.fft_size, 1);
  auto power = torch::real(spectrum * torch::conj(spectrum));
  auto energies = torch::matmul(power, mel_filterbank(cfg).transpose(0, 1));
  AudioFeatureSequence seq;
  seq.rows = torch::log(torch::clamp_min(energies, cfg.log_floor)).contiguous();
  seq.frame_rate = cfg.frame_rate;
  return seq;
}

NormStats fit_norm_stats(std::span<const AudioFeatureSequence> seqs) {
  if (seqs.empty()) throw ConfigError("fit_norm_stats: no sequences");
  std::vector<torch::Tensor> parts;
  parts.reserve(seqs.size());
  for (const auto& s : seqs) {
    if (s.rows.dim() != 2 || s.rows.size(0) < 1) throw ShapeError("fit_norm_stats: empty or malformed sequence");
    if (!parts.empty() && s.rows.size(1) != parts.front().size(1)) {
      throw ShapeError("fit_norm_stats: sequences disagree on feature width");
    }
    parts.push_back(s.rows.to(torch::kFloat64));
  }
  auto all = torch::cat(parts, 0);
  NormStats stats;
  stats.mean = all.mean(0);
  auto centered = all - stats.mean;
  stats.std = torch::clamp_min(torch::sqrt((centered * centered).mean(0)), kNormStdFloor);
  return stats;
}

AudioFeatureSequence normalize(const AudioFeatureSequence& seq, const NormStats& stats) {
  if (seq.rows.dim() != 2 || stats.mean.dim() != 1 || seq.rows.size(1) != stats.mean.size(0) ||
      stats.std.sizes() != stats.mean.sizes()) {
    throw ShapeError("normalize: feature width does not match stats");
  }
  AudioFeatureSequence out;
  out.rows = ((seq.rows.to(torch::kFloat64) - stats.mean) / stats.std).contiguous();
  out.frame_rate = seq.frame_rate;
  return out;
}

torch::Tensor make_windows(const torch::Tensor& rows, int window) {
  if (window < 1) throw ConfigError("make_windows: window length must be >= 1");
  if (rows.dim() != 2 || rows.size(0) < 1) throw ShapeError("make_windows: expected a non-empty [T, dim] matrix");
  const auto T = rows.size(0);
  auto t = torch::arange(T, torch::kInt64).unsqueeze(1);
  auto offsets = torch::arange(window, torch::kInt64).unsqueeze(0) - (window - 1);
  auto index = torch::clamp_min(t + offsets, 0);
  return rows.index_select(0, index.reshape({-1})).reshape({T, window, rows.size(1)});
}

torch::Tensor make_windows(const AudioFeatureSequence& seq, int window) {
  return make_windows(seq.rows, window);
}

void save_features(const std::filesystem::path& path, const AudioFeatureSequence& seq) {
  Archive a("features");
  a.meta()["frame_rate"] = seq.frame_rate;
  a.put("rows", seq.rows.to(torch::kFloat64));
  a.save(path);
}

AudioFeatureSequence load_features(const std::filesystem::path& path) {
  auto a = Archive::load(path);
  a.expect_kind("features");
  AudioFeatureSequence seq;
  seq.rows = a.get("rows");
  seq.frame_rate = a.meta().value("frame_rate", 30);
  return seq;
}

void save_norm_stats(const std::filesystem::path& path, const NormStats& stats) {
  Archive a("norm_stats");
  a.put("mean", stats.mean.to(torch::kFloat64));
  a.put("std", stats.std.to(torch::kFloat64));
  a.save(path);
}

NormStats load_norm_stats(const std::filesystem::path& path) {
  auto a = Archive::load(path);
  a.expect_kind("norm_stats");
  return {a.get("mean"), a.get("std")};
}

}  // namespace avsynth
