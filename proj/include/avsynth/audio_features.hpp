#pragma once

// Log mel-filterbank featurization aligned to the video frame clock.
//
// Row t of a feature sequence analyses the window that starts at sample
// floor(t * sample_rate / frame_rate). At 16 kHz and 30 Hz that gives hops of
// 533, 533, 534 samples, so every second of audio maps to exactly 30 rows
// with no drift. A waveform of n samples yields round(n * frame_rate /
// sample_rate) rows (half rounds up); windows running past the end of the
// signal are zero padded.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <torch/torch.h>

namespace avsynth {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

struct FeatureConfig {
  int sample_rate = 16000;
  int frame_rate = 30;
  int n_mels = 40;
  int fft_size = 1024;
  double window_seconds = 0.044;
  double log_floor = 1e-10;

  // Throws ConfigError on an inconsistent configuration.
  void validate() const;

  std::int64_t window_samples() const;
  std::int64_t row_start(std::int64_t row) const;
  std::int64_t num_rows(std::int64_t num_samples) const;
};

struct AudioFeatureSequence {
  torch::Tensor rows;  // [T, n_mels], float64
  int frame_rate = 30;

  std::int64_t length() const { return rows.size(0); }
  std::int64_t dim() const { return rows.size(1); }
};

struct NormStats {
  torch::Tensor mean;  // [n_mels], float64
  torch::Tensor std;   // [n_mels], float64, entries > 0
};

inline constexpr double kNormStdFloor = 1e-8;

// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filters between 0 Hz and Nyquist, [n_mels, fft_size/2 + 1].
torch::Tensor mel_filterbank(const FeatureConfig& cfg);
// Peak frequency of each triangular filter in Hz.
std::vector<double> mel_center_frequencies(const FeatureConfig& cfg);

// Windowed-sinc (Kaiser) band-limited resampling. Output length is
// round(n * target / source). Filter taps are normalized per output sample, so
// constant signals are reproduced exactly, including at the edges.
Waveform resample(const Waveform& w, int target_rate);

AudioFeatureSequence extract_log_mel(const Waveform& w, const FeatureConfig& cfg = {});

// Per-dimension mean and population standard deviation pooled over all rows
// of all sequences; std is clamped below at kNormStdFloor.
NormStats fit_norm_stats(std::span<const AudioFeatureSequence> seqs);
AudioFeatureSequence normalize(const AudioFeatureSequence& seq, const NormStats& stats);

// One look-back window per row: [T, W, dim]. Window t holds rows t-W+1..t;
// indices before the first row repeat row 0.
torch::Tensor make_windows(const AudioFeatureSequence& seq, int window);
torch::Tensor make_windows(const torch::Tensor& rows, int window);

// PCM 16-bit little-endian RIFF/WAVE. Multi-channel input is averaged to
// mono; samples are scaled to [-1, 1).
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);

// Archive round trips (kinds "features" and "norm_stats").
void save_features(const std::filesystem::path& path, const AudioFeatureSequence& seq);
AudioFeatureSequence load_features(const std::filesystem::path& path);
void save_norm_stats(const std::filesystem::path& path, const NormStats& stats);
NormStats load_norm_stats(const std::filesystem::path& path);

}  // namespace avsynth
