#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "avsynth/audio_features.hpp"
#include "avsynth/error.hpp"

namespace avsynth {
namespace {

std::uint32_t u32(const std::string& b, std::size_t p) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[p])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[p + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[p + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[p + 3])) << 24;
}

std::uint16_t u16(const std::string& b, std::size_t p) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[p]) |
                                    static_cast<unsigned char>(b[p + 1]) << 8);
}

void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("wav: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string b = ss.str();
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0) {
    throw IoError("wav: not a RIFF/WAVE file: " + path.string());
  }

  int channels = 0, rate = 0, bits = 0;
  std::size_t data_pos = 0, data_len = 0;
  std::size_t p = 12;
  while (p + 8 <= b.size()) {
    const std::string id = b.substr(p, 4);
    const std::size_t len = u32(b, p + 4);
    const std::size_t body = p + 8;
    if (id == "fmt ") {
      if (len < 16 || body + 16 > b.size()) throw IoError("wav: truncated fmt chunk");
      const auto format = u16(b, body);
      channels = u16(b, body + 2);
      rate = static_cast<int>(u32(b, body + 4));
      bits = u16(b, body + 14);
      if (format != 1 && format != 0xFFFE) throw IoError("wav: only PCM is supported");
    } else if (id == "data") {
      data_pos = body;
      data_len = std::min(len, b.size() - body);
      break;
    }
    p = body + len + (len & 1);
  }
  if (channels < 1 || rate <= 0) throw IoError("wav: missing fmt chunk");
  if (bits != 16) throw IoError("wav: only 16-bit PCM is supported");
  if (data_pos == 0) throw IoError("wav: missing data chunk");

  const std::size_t frames = data_len / (2 * static_cast<std::size_t>(channels));
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const auto raw = static_cast<std::int16_t>(u16(b, data_pos + 2 * (i * channels + c)));
      acc += raw / 32768.0;
    }
    w.samples[i] = acc / channels;
  }
  return w;
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  if (w.sample_rate <= 0) throw ConfigError("wav: sample rate must be positive");
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  std::string out;
  out.reserve(44 + 2 * w.samples.size());
  out += "RIFF";
  put32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  put32(out, 16);
  put16(out, 1);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(w.sample_rate));
  put32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put16(out, 2);
  put16(out, 16);
  out += "data";
  put32(out, 2 * n);
  for (double s : w.samples) {
    const double scaled = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("wav: cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace avsynth
