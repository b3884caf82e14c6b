// avsynth command line tool.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "avsynth/archive.hpp"
#include "avsynth/audio2code.hpp"
#include "avsynth/audio_features.hpp"
#include "avsynth/config.hpp"
#include "avsynth/error.hpp"
#include "avsynth/image_io.hpp"
#include "avsynth/metrics.hpp"
#include "avsynth/pipeline.hpp"
#include "avsynth/pose_provider.hpp"

namespace fs = std::filesystem;
using namespace avsynth;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> perceptual;
  std::optional<int> desk;
  bool serial = false;
};

template <typename T>
void override_with(std::optional<T> const& v, T& dst) {
  if (v) dst = *v;
}

fs::path in_path(const std::string& p);

PipelineConfig make_config(const Common& c) {
  const PipelineConfig base = c.desk ? PipelineConfig::desk(*c.desk) : PipelineConfig{};
  PipelineConfig cfg = c.config_path.empty() ? base : PipelineConfig::load(in_path(c.config_path), base);
  cfg.apply_env();
  override_with(c.seed, cfg.seed);
  override_with(c.perceptual, cfg.perceptual);
  if (c.serial) cfg.parallel_stage2 = false;
  cfg.propagate();
  cfg.validate();
  return cfg;
}

template <typename T>
CLI::Option* optional(CLI::App* sub, const std::string& name, std::optional<T>& value, const std::string& help) {
  return sub->add_option_function<T>(name, [&value](const T& v) { value = v; }, help);
}

fs::path out_path(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute()) return path;
  return output_root(fs::current_path()) / path;
}

// Relative inputs missing from the working directory are looked up under the
// output root.
fs::path in_path(const std::string& p) {
  fs::path path(p);
  if (path.empty() || path.is_absolute() || fs::exists(path)) return path;
  const auto rooted = output_root(fs::current_path()) / path;
  return fs::exists(rooted) ? rooted : path;
}

void log(const std::string& msg) { std::cerr << "[avsynth] " << msg << '\n'; }

void check_store_size(const DataStore& store, const PipelineConfig& cfg) {
  if (store.frames.size(2) != cfg.image_size) {
    throw ConfigError("store images are " + std::to_string(store.frames.size(2)) + " px but the configuration uses " +
                      std::to_string(cfg.image_size) + " px (pass --desk " + std::to_string(store.frames.size(2)) +
                      " or a matching --config)");
  }
}

std::vector<int> parse_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  if (out.empty()) throw ConfigError("empty window list");
  return out;
}

void save_codes(const fs::path& path, const torch::Tensor& codes) {
  Archive a("codes");
  a.put("codes", codes.to(torch::kFloat32));
  a.save(path);
}

torch::Tensor load_codes(const fs::path& path) {
  if (!fs::exists(path)) throw DependencyError("no latent codes at " + path.string() + " (run train-vae first)");
  auto a = Archive::load(path);
  a.expect_kind("codes");
  return a.get("codes");
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  CLI::App app{"Audio-driven lecture video synthesis"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON configuration file")->check(CLI::ExistingFile);
    optional(sub, "--seed", common.seed, "Base seed (overrides AVSYNTH_SEED)");
    optional(sub, "--perceptual", common.perceptual, "Perceptual backend: random | pretrained:<path>");
    optional(sub, "--desk", common.desk, "Use the reduced topology at this image size");
  };

  // make-synthetic
  auto* mk = app.add_subcommand("make-synthetic", "Render a synthetic lecture dataset (frames, poses, audio)");
  std::string mk_out;
  std::int64_t mk_frames = 300;
  int mk_size = 256;
  mk->add_option("--out", mk_out, "Output directory")->required();
  mk->add_option("--frames", mk_frames, "Number of frames");
  mk->add_option("--size", mk_size, "Image size");
  add_common(mk);

  // prepare
  auto* prep = app.add_subcommand("prepare", "Build a tick-aligned store from frames and audio");
  std::string prep_frames, prep_audio, prep_poses, prep_out;
  prep->add_option("--frames", prep_frames, "Directory of video frames")->required();
  prep->add_option("--audio", prep_audio, "WAV file")->required();
  prep->add_option("--poses", prep_poses, "Directory of precomputed pose images (default: synthetic segmentation)");
  prep->add_option("--out", prep_out, "Store directory")->required();
  add_common(prep);

  // train-vae
  auto* tv = app.add_subcommand("train-vae", "Stage 1: fit the pose VAE");
  std::string tv_data, tv_out = "models";
  std::optional<double> tv_lr, tv_kl;
  std::optional<int> tv_steps, tv_batch;
  tv->add_option("--data", tv_data, "Prepared store")->required();
  tv->add_option("--out", tv_out, "Model directory");
  optional(tv, "--lr", tv_lr, "RMSProp learning rate (0.00025)");
  optional(tv, "--kl-weight", tv_kl, "KL weight (1e-3)");
  optional(tv, "--steps", tv_steps, "Update steps");
  optional(tv, "--batch", tv_batch, "Mini-batch size");
  add_common(tv);

  // train-blstm
  auto* tb = app.add_subcommand("train-blstm", "Stage 2a: fit the audio-to-code BLSTM");
  std::string tb_features, tb_codes, tb_out = "models";
  std::optional<int> tb_window, tb_steps, tb_batch;
  std::optional<double> tb_lr;
  tb->add_option("--features", tb_features, "Feature archive (store/features.avsa)")->required();
  tb->add_option("--codes", tb_codes, "Latent code archive written by train-vae")->required();
  optional(tb, "--window", tb_window, "Look-back window (15)");
  optional(tb, "--lr", tb_lr, "RMSProp learning rate (1e-6)");
  optional(tb, "--steps", tb_steps, "Update steps");
  optional(tb, "--batch", tb_batch, "Mini-batch size");
  tb->add_option("--out", tb_out, "Model directory");
  add_common(tb);

  // train-s2p
  auto* ts = app.add_subcommand("train-s2p", "Stage 2b: fit SeqPix2Pix");
  std::string ts_clips, ts_out = "models";
  std::optional<double> ts_l0, ts_l1, ts_l2, ts_lr, ts_b1, ts_b2;
  std::optional<int> ts_memory, ts_steps, ts_batch, ts_stride;
  ts->add_option("--clips", ts_clips, "Prepared store holding poses/ and frames/")->required();
  optional(ts, "--lambda0", ts_l0, "Structural weight (0.05)");
  optional(ts, "--lambda1", ts_l1, "Temporal weight, generated history (10)");
  optional(ts, "--lambda2", ts_l2, "Temporal weight, real history (10)");
  optional(ts, "--memory", ts_memory, "Predictor memory length (2)");
  optional(ts, "--lr", ts_lr, "Adam learning rate (2e-4)");
  optional(ts, "--beta1", ts_b1, "Adam beta1 (0.5)");
  optional(ts, "--beta2", ts_b2, "Adam beta2 (0.999)");
  optional(ts, "--steps", ts_steps, "Update steps");
  optional(ts, "--batch", ts_batch, "Clips per step");
  optional(ts, "--stride", ts_stride, "Tick stride between clip starts (30)");
  ts->add_option("--out", ts_out, "Model directory (must hold vae.avsa)");
  add_common(ts);

  // train-all
  auto* ta = app.add_subcommand("train-all", "Stage 1 then both stage-2 models; writes bundle.avsa");
  std::string ta_data, ta_out = "models";
  ta->add_option("--data", ta_data, "Prepared store")->required();
  ta->add_option("--out", ta_out, "Model directory");
  ta->add_flag("--serial", common.serial, "Run the stage-2 trainers one after the other");
  add_common(ta);

  // synth
  auto* sy = app.add_subcommand("synth", "Synthesize frames from audio");
  std::string sy_audio, sy_bundle, sy_out;
  std::int64_t sy_chunk = 64;
  sy->add_option("--audio", sy_audio, "WAV file")->required();
  sy->add_option("--bundle", sy_bundle, "Bundle file or model directory")->required();
  sy->add_option("--out", sy_out, "Output frame directory")->required();
  sy->add_option("--chunk", sy_chunk, "Ticks per streamed block");
  add_common(sy);

  // eval
  auto* ev = app.add_subcommand("eval", "MSE / PSNR / SSIM between two frame directories");
  std::string ev_pred, ev_truth, ev_out = "report.csv";
  ev->add_option("--pred", ev_pred, "Predicted frames")->required();
  ev->add_option("--truth", ev_truth, "Ground-truth frames")->required();
  ev->add_option("--out", ev_out, "CSV report");

  // ablate-window
  auto* ab = app.add_subcommand("ablate-window", "Validation loss against look-back window length");
  std::string ab_list = "1,5,10,15,20", ab_features, ab_codes, ab_out = "ablation.csv";
  std::int64_t ab_ticks = 600;
  std::optional<double> ab_lr;
  std::optional<int> ab_steps, ab_batch, ab_hidden;
  ab->add_option("--list", ab_list, "Comma-separated window lengths");
  ab->add_option("--features", ab_features, "Feature archive (default: synthetic smooth targets)");
  ab->add_option("--codes", ab_codes, "Latent code archive matching --features");
  ab->add_option("--ticks", ab_ticks, "Ticks of synthetic data");
  optional(ab, "--lr", ab_lr, "RMSProp learning rate");
  optional(ab, "--steps", ab_steps, "Update steps per window");
  optional(ab, "--batch", ab_batch, "Mini-batch size");
  optional(ab, "--hidden", ab_hidden, "Hidden units per direction");
  ab->add_option("--out", ab_out, "CSV output");
  add_common(ab);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*mk) {
      const auto cfg = make_config(common);
      SyntheticDatasetConfig dc;
      dc.image_size = mk_size;
      dc.frame_rate = cfg.frame_rate;
      dc.sample_rate = cfg.features.sample_rate;
      const auto data = synthesize_lecture_dataset(cfg.seed, mk_frames, dc);
      const auto dir = out_path(mk_out);
      FrameManifest fm;
      fm.fps = cfg.frame_rate;
      const auto frames_manifest = write_frame_dir(dir / "frames", data.frames, fm);
      FrameManifest pm;
      pm.kind = "poses";
      pm.fps = cfg.frame_rate;
      pm.source_checksum = frames_manifest.checksum;
      write_frame_dir(dir / "poses", data.poses, pm);
      write_wav(dir / "audio.wav", data.audio);
      log("wrote " + std::to_string(mk_frames) + " synthetic frames to " + dir.string());
    } else if (*prep) {
      const auto cfg = make_config(common);
      std::unique_ptr<PoseProvider> provider;
      if (prep_poses.empty()) {
        provider = std::make_unique<SyntheticPoseProvider>();
      } else {
        provider = std::make_unique<PrecomputedPoseProvider>(in_path(prep_poses));
      }
      const auto store = prepare_dataset(in_path(prep_frames), in_path(prep_audio), *provider, cfg);
      const auto checksum = save_store(out_path(prep_out), store);
      std::cout << "ticks " << store.length() << "\nchecksum " << checksum << '\n';
    } else if (*tv) {
      auto cfg = make_config(common);
      override_with(tv_lr, cfg.vae_train.lr);
      override_with(tv_kl, cfg.vae_train.kl_weight);
      override_with(tv_steps, cfg.vae_train.steps);
      override_with(tv_batch, cfg.vae_train.batch_size);
      const auto store = load_store(in_path(tv_data));
      check_store_size(store, cfg);
      const auto phi = PerceptualExtractor::from_spec(cfg.perceptual);
      ModelBundle bundle;
      train_vae_stage(bundle, store, cfg, phi);
      const auto dir = out_path(tv_out);
      bundle.save_stages(dir);
      torch::NoGradGuard guard;
      save_codes(dir / "codes.avsa", encode_means(bundle.vae, store.poses));
      log("VAE and latent codes written to " + dir.string());
    } else if (*tb) {
      auto cfg = make_config(common);
      override_with(tb_window, cfg.window);
      override_with(tb_lr, cfg.blstm_train.lr);
      override_with(tb_steps, cfg.blstm_train.steps);
      override_with(tb_batch, cfg.blstm_train.batch_size);
      cfg.validate();
      const auto codes = load_codes(in_path(tb_codes));
      const auto features = load_features(in_path(tb_features));
      if (features.length() != codes.size(0)) throw ShapeError("features and codes differ in tick count");
      const AudioFeatureSequence seqs[] = {features};
      const auto stats = fit_norm_stats(seqs);
      const auto windows = make_windows(normalize(features, stats), cfg.window).to(torch::kFloat32);
      auto result = train_blstm(windows, codes, cfg.blstm, cfg.blstm_train);
      ModelBundle bundle;
      bundle.blstm_config = cfg.blstm;
      bundle.blstm = result.model;
      bundle.norm_stats = stats;
      bundle.window = cfg.window;
      bundle.features = cfg.features;
      bundle.perceptual_id = cfg.perceptual;
      bundle.save_stages(out_path(tb_out));
      log("BLSTM final mini-batch MSE " + std::to_string(result.loss_history.back()));
    } else if (*ts) {
      auto cfg = make_config(common);
      override_with(ts_memory, cfg.memory);
      cfg.propagate();
      override_with(ts_l0, cfg.s2p_train.weights.structural);
      override_with(ts_l1, cfg.s2p_train.weights.temporal_generated);
      override_with(ts_l2, cfg.s2p_train.weights.temporal_real);
      override_with(ts_lr, cfg.s2p_train.lr);
      override_with(ts_b1, cfg.s2p_train.beta1);
      override_with(ts_b2, cfg.s2p_train.beta2);
      override_with(ts_steps, cfg.s2p_train.steps);
      override_with(ts_batch, cfg.s2p_train.batch_size);
      override_with(ts_stride, cfg.s2p_train.start_stride);
      cfg.validate();
      const auto dir = out_path(ts_out);
      ModelBundle bundle = fs::is_directory(dir) ? ModelBundle::load_stages(dir) : ModelBundle{};
      const auto store = load_store(in_path(ts_clips));
      check_store_size(store, cfg);
      const auto phi = PerceptualExtractor::from_spec(cfg.perceptual);
      train_s2p_stage(bundle, store, cfg, phi);
      bundle.save_stages(dir);
      log("SeqPix2Pix written to " + dir.string());
    } else if (*ta) {
      const auto cfg = make_config(common);
      const auto store = load_store(in_path(ta_data));
      check_store_size(store, cfg);
      const auto phi = PerceptualExtractor::from_spec(cfg.perceptual);
      auto bundle = train_all(store, cfg, phi);
      const auto dir = out_path(ta_out);
      bundle.save_stages(dir);
      bundle.save(dir / "bundle.avsa");
      cfg.save(dir / "config.json");
      std::cout << "bundle " << (dir / "bundle.avsa").string() << "\nchecksum " << bundle.checksum() << '\n';
    } else if (*sy) {
      make_config(common);
      auto bundle = ModelBundle::open(in_path(sy_bundle));
      SynthesisOptions opts;
      opts.chunk = sy_chunk;
      const auto m = synthesize_to_dir(read_wav(in_path(sy_audio)), bundle, out_path(sy_out), opts);
      std::cout << "frames " << m.count << "\nchecksum " << m.checksum << '\n';
    } else if (*ev) {
      const auto report = evaluate_set(in_path(ev_pred), in_path(ev_truth));
      write_report_csv(out_path(ev_out), report);
      std::cout << std::fixed << std::setprecision(4) << "frames " << report.per_frame.size() << "\nmse "
                << report.mean.mse << "\npsnr " << report.mean.psnr << "\nssim " << report.mean.ssim << '\n';
    } else if (*ab) {
      auto cfg = make_config(common);
      const auto windows = parse_list(ab_list);
      torch::Tensor x, y;
      if (ab_features.empty()) {
        const auto data = smooth_target_data(cfg.seed, ab_ticks, cfg.features.n_mels, 8);
        x = data.features;
        y = data.targets;
      } else {
        const auto features = load_features(in_path(ab_features));
        const AudioFeatureSequence seqs[] = {features};
        x = normalize(features, fit_norm_stats(seqs)).rows.to(torch::kFloat32);
        y = load_codes(in_path(ab_codes));
      }
      BlstmConfig model = cfg.blstm;
      model.input_dim = static_cast<int>(x.size(1));
      model.output_dim = static_cast<int>(y.size(1));
      override_with(ab_hidden, model.hidden);
      BlstmTrainConfig train = cfg.blstm_train;
      override_with(ab_lr, train.lr);
      override_with(ab_steps, train.steps);
      override_with(ab_batch, train.batch_size);
      const auto table = window_ablation(x, y, windows, model, train);
      const auto path = out_path(ab_out);
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      std::ofstream csv(path);
      if (!csv) throw IoError("cannot write " + path.string());
      csv << "window,train_mse,validation_mse\n" << std::setprecision(10);
      std::cout << std::left << std::setw(8) << "window" << std::setw(16) << "train_mse" << "validation_mse\n";
      for (const auto& row : table) {
        csv << row.window << ',' << row.train_loss << ',' << row.validation_loss << '\n';
        std::cout << std::left << std::setw(8) << row.window << std::setw(16) << row.train_loss << row.validation_loss
                  << '\n';
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
