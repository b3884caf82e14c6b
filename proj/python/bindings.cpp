#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "avsynth/audio_features.hpp"
#include "avsynth/config.hpp"
#include "avsynth/error.hpp"
#include "avsynth/image_io.hpp"
#include "avsynth/metrics.hpp"
#include "avsynth/pipeline.hpp"
#include "avsynth/pose_provider.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace avsynth;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const Array& a) {
  std::vector<std::int64_t> shape(a.shape(), a.shape() + a.ndim());
  auto t = torch::empty(shape, torch::kFloat64);
  std::memcpy(t.data_ptr<double>(), a.data(), sizeof(double) * static_cast<std::size_t>(a.size()));
  return t;
}

Array to_array(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat64).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  Array out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<double>(), sizeof(double) * static_cast<std::size_t>(c.numel()));
  return out;
}

PipelineConfig config_from(const std::string& json, std::optional<int> desk) {
  const PipelineConfig base = desk ? PipelineConfig::desk(*desk) : PipelineConfig{};
  auto cfg = json.empty() ? base : PipelineConfig::from_json(nlohmann::json::parse(json), base);
  cfg.apply_env();
  cfg.propagate();
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_avsynth, m) {
  m.doc() = "Audio-driven video synthesis core";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<DependencyError>(m, "DependencyError", PyExc_RuntimeError);

  m.def(
      "log_mel",
      [](const Array& samples, int sample_rate) {
        if (samples.ndim() != 1) throw ShapeError("samples must be one-dimensional");
        Waveform w;
        w.sample_rate = sample_rate;
        w.samples.assign(samples.data(), samples.data() + samples.size());
        return to_array(extract_log_mel(w).rows);
      },
      py::arg("samples"), py::arg("sample_rate") = 16000,
      "Log-mel rows [T, 40], one per 30 Hz tick; resamples to 16 kHz first.");

  m.def(
      "read_wav",
      [](const fs::path& path) {
        const auto w = read_wav(path);
        return py::make_tuple(Array(static_cast<py::ssize_t>(w.samples.size()), w.samples.data()), w.sample_rate);
      },
      py::arg("path"));
  m.def(
      "write_wav",
      [](const fs::path& path, const Array& samples, int sample_rate) {
        Waveform w;
        w.sample_rate = sample_rate;
        w.samples.assign(samples.data(), samples.data() + samples.size());
        write_wav(path, w);
      },
      py::arg("path"), py::arg("samples"), py::arg("sample_rate") = 16000);

  m.def("mse", [](const Array& a, const Array& b) { return mse(to_tensor(a), to_tensor(b)); });
  m.def("psnr", [](const Array& a, const Array& b) { return psnr(to_tensor(a), to_tensor(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_tensor(a), to_tensor(b)); },
        "Images are [3, H, W] or [H, W] on the 0..255 scale.");

  m.def(
      "render_pose",
      [](const std::vector<double>& angles, double torso_x, double torso_y, int size) {
        if (angles.size() != static_cast<std::size_t>(kNumJoints)) throw ShapeError("expected one angle per joint");
        FigureSpec s;
        std::copy(angles.begin(), angles.end(), s.angles.begin());
        s.torso_x = torso_x;
        s.torso_y = torso_y;
        return to_array(render_synthetic_pose(s, size));
      },
      py::arg("angles"), py::arg("torso_x") = 0.5, py::arg("torso_y") = 0.6, py::arg("size") = 256);

  m.def(
      "default_config",
      [](std::optional<int> desk) { return config_from("", desk).to_json().dump(2); }, py::arg("desk") = py::none(),
      "Pipeline configuration as JSON, optionally the reduced desk setup.");

  m.def(
      "make_synthetic",
      [](const fs::path& out, std::int64_t frames, int size, std::uint64_t seed) {
        SyntheticDatasetConfig dc;
        dc.image_size = size;
        const auto data = synthesize_lecture_dataset(seed, frames, dc);
        FrameManifest fm;
        const auto written = write_frame_dir(out / "frames", data.frames, fm);
        FrameManifest pm;
        pm.kind = "poses";
        pm.source_checksum = written.checksum;
        write_frame_dir(out / "poses", data.poses, pm);
        write_wav(out / "audio.wav", data.audio);
        return written.checksum;
      },
      py::arg("out"), py::arg("frames"), py::arg("size") = 256, py::arg("seed") = 0);

  m.def(
      "prepare",
      [](const fs::path& frames, const fs::path& audio, const fs::path& out, const std::string& config,
         std::optional<int> desk) {
        const auto cfg = config_from(config, desk);
        py::gil_scoped_release release;
        return save_store(out, prepare_dataset(frames, audio, SyntheticPoseProvider{}, cfg));
      },
      py::arg("frames"), py::arg("audio"), py::arg("out"), py::arg("config") = "", py::arg("desk") = py::none(),
      "Builds a store directory; returns its checksum.");

  m.def(
      "train_all",
      [](const fs::path& store, const fs::path& out, const std::string& config, std::optional<int> desk) {
        const auto cfg = config_from(config, desk);
        py::gil_scoped_release release;
        const auto bundle = train_all(load_store(store), cfg, PerceptualExtractor::from_spec(cfg.perceptual));
        bundle.save(out);
        return bundle.checksum();
      },
      py::arg("store"), py::arg("out"), py::arg("config") = "", py::arg("desk") = py::none(),
      "Trains every stage and writes the bundle file; returns its checksum.");

  m.def(
      "synthesize",
      [](const fs::path& audio, const fs::path& bundle_path, const fs::path& out) {
        FrameManifest manifest;
        {
          py::gil_scoped_release release;
          auto bundle = ModelBundle::open(bundle_path);
          manifest = synthesize_to_dir(read_wav(audio), bundle, out);
        }
        return py::make_tuple(manifest.count, manifest.checksum);
      },
      py::arg("audio"), py::arg("bundle"), py::arg("out"), "Writes frames to `out`; returns (count, checksum).");

  m.def("frame_dir_checksum", [](const fs::path& dir) { return frame_dir_checksum(dir); });
}
