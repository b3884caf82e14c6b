#include "avsynth/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>

#include "avsynth/error.hpp"
#include "avsynth/rng.hpp"

namespace avsynth {
namespace {

torch::Tensor quantize8(const torch::Tensor& x) {
  return torch::round(x.clamp(0.0, 1.0) * 255.0) / 255.0;
}

Waveform quantize16(const Waveform& w) {
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.reserve(w.samples.size());
  for (double s : w.samples) out.samples.push_back(std::clamp(std::round(s * 32768.0), -32768.0, 32767.0) / 32768.0);
  return out;
}

nlohmann::json feature_json(const FeatureConfig& f) {
  return {{"sample_rate", f.sample_rate},   {"frame_rate", f.frame_rate},         {"n_mels", f.n_mels},
          {"fft_size", f.fft_size},         {"window_seconds", f.window_seconds}, {"log_floor", f.log_floor}};
}

FeatureConfig feature_from_json(const nlohmann::json& j) {
  FeatureConfig f;
  f.sample_rate = j.at("sample_rate").get<int>();
  f.frame_rate = j.at("frame_rate").get<int>();
  f.n_mels = j.at("n_mels").get<int>();
  f.fft_size = j.at("fft_size").get<int>();
  f.window_seconds = j.at("window_seconds").get<double>();
  f.log_floor = j.at("log_floor").get<double>();
  f.validate();
  return f;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void put_vae(Archive& a, const ModelBundle& b) {
  a.meta()["vae"] = b.vae_config->to_json();
  a.put_module("vae", *b.vae);
}

void put_blstm(Archive& a, const ModelBundle& b) {
  a.meta()["blstm"] = b.blstm_config->to_json();
  a.meta()["window"] = b.window;
  a.meta()["features"] = feature_json(b.features);
  a.put_module("blstm", *b.blstm);
  a.put("norm.mean", b.norm_stats->mean);
  a.put("norm.std", b.norm_stats->std);
}

void put_s2p_config(Archive& a, const ModelBundle& b) { a.meta()["seqpix2pix"] = b.s2p_config->to_json(); }

void get_vae(const Archive& a, ModelBundle& b) {
  b.vae_config = VaeConfig::from_json(a.meta().at("vae"));
  b.vae = Vae(*b.vae_config, 0);
  a.load_module("vae", *b.vae);
}

void get_blstm(const Archive& a, ModelBundle& b) {
  b.blstm_config = BlstmConfig::from_json(a.meta().at("blstm"));
  b.window = a.meta().at("window").get<int>();
  b.features = feature_from_json(a.meta().at("features"));
  b.blstm = Blstm(*b.blstm_config, 0);
  a.load_module("blstm", *b.blstm);
  b.norm_stats = NormStats{a.get("norm.mean"), a.get("norm.std")};
}

SeqPix2PixModels empty_models(const SeqPix2PixConfig& cfg) { return SeqPix2PixModels::create(cfg, 0); }

std::int64_t checked_rows(const FeatureConfig& f, const Waveform& audio) {
  if (audio.sample_rate != f.sample_rate) throw ConfigError("audio sample rate differs from the feature rate");
  return f.num_rows(static_cast<std::int64_t>(audio.samples.size()));
}

}  // namespace

void DataStore::validate() const {
  if (!frames.defined() || !poses.defined() || !features.rows.defined()) {
    throw ShapeError("store: missing frames, poses or features");
  }
  if (frames.dim() != 4 || frames.size(1) != 3 || frames.size(2) != frames.size(3)) {
    throw ShapeError("store: frames must be [N, 3, S, S]");
  }
  if (poses.sizes() != frames.sizes()) throw ShapeError("store: poses and frames differ in shape");
  if (features.length() != frames.size(0)) throw ShapeError("store: feature rows and frames are not tick-aligned");
}

namespace {

DataStore assemble_store(const torch::Tensor& frames, const Waveform& audio, const PoseProvider& provider,
                         const PipelineConfig& cfg) {
  const Waveform pcm = quantize16(resample(audio, cfg.features.sample_rate));
  auto features = extract_log_mel(pcm, cfg.features);
  const std::int64_t n_frames = frames.size(0);
  const std::int64_t n_rows = features.length();
  if (std::llabs(n_frames - n_rows) > 1) {
    throw ConfigError("prepare_dataset: " + std::to_string(n_frames) + " frames but " + std::to_string(n_rows) +
                      " audio ticks");
  }
  const std::int64_t n = std::min(n_frames, n_rows);
  DataStore store;
  store.frames = frames.slice(0, 0, n).contiguous();
  store.poses = quantize8(provider.poses_from_frames(store.frames)).to(torch::kFloat32).contiguous();
  store.features = {features.rows.slice(0, 0, n).contiguous(), cfg.frame_rate};
  store.audio = pcm;
  store.pose_source = provider.id();
  store.validate();
  return store;
}

}  // namespace

DataStore prepare_dataset(const torch::Tensor& raw_frames, const Waveform& audio, const PoseProvider& provider,
                          const PipelineConfig& cfg) {
  cfg.validate();
  if (raw_frames.dim() != 4 || raw_frames.size(0) < 1 || raw_frames.size(1) != 3) {
    throw ShapeError("prepare_dataset: expected non-empty [N, 3, H, W] frames");
  }
  std::vector<torch::Tensor> prepared;
  prepared.reserve(static_cast<std::size_t>(raw_frames.size(0)));
  for (std::int64_t i = 0; i < raw_frames.size(0); ++i) {
    prepared.push_back(quantize8(prepare_frame(raw_frames[i], cfg.image_size)));
  }
  return assemble_store(torch::stack(prepared), audio, provider, cfg);
}

DataStore prepare_dataset(const std::filesystem::path& frames_dir, const std::filesystem::path& audio_path,
                          const PoseProvider& provider, const PipelineConfig& cfg) {
  cfg.validate();
  const auto files = list_image_files(frames_dir);
  if (files.empty()) throw IoError("no image files in " + frames_dir.string());
  std::vector<torch::Tensor> prepared;
  prepared.reserve(files.size());
  for (const auto& f : files) prepared.push_back(quantize8(prepare_frame(read_image(f), cfg.image_size)));
  return assemble_store(torch::stack(prepared), read_wav(audio_path), provider, cfg);
}

std::string store_checksum(const std::filesystem::path& dir) {
  std::string acc;
  acc += frame_dir_checksum(dir / "frames");
  acc += frame_dir_checksum(dir / "poses");
  acc += sha256_file(dir / "features.avsa");
  acc += sha256_file(dir / "audio.wav");
  return sha256_hex(acc);
}

std::string save_store(const std::filesystem::path& dir, const DataStore& store) {
  store.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create store " + dir.string());
  FrameManifest fm;
  fm.kind = "frames";
  fm.fps = store.features.frame_rate;
  const auto frames_manifest = write_frame_dir(dir / "frames", store.frames, fm);
  FrameManifest pm;
  pm.kind = "poses";
  pm.fps = store.features.frame_rate;
  pm.source_checksum = frames_manifest.checksum;
  write_frame_dir(dir / "poses", store.poses, pm);
  save_features(dir / "features.avsa", store.features);
  write_wav(dir / "audio.wav", store.audio);

  const std::string checksum = store_checksum(dir);
  write_json(dir / "manifest.json", {{"format_version", kStoreFormatVersion},
                                     {"kind", "store"},
                                     {"fps", store.features.frame_rate},
                                     {"count", store.length()},
                                     {"image_size", store.frames.size(2)},
                                     {"sample_rate", store.audio.sample_rate},
                                     {"pose_source", store.pose_source},
                                     {"synthetic", true},
                                     {"checksum", checksum}});
  return checksum;
}

DataStore load_store(const std::filesystem::path& dir) {
  const auto manifest = read_json(dir / "manifest.json");
  if (manifest.value("kind", "") != "store") throw IoError(dir.string() + " is not a prepared store");
  if (manifest.value("format_version", 0) != kStoreFormatVersion) {
    throw IoError("store: unsupported format version in " + dir.string());
  }
  for (const char* part : {"frames", "poses", "features.avsa", "audio.wav"}) {
    if (!std::filesystem::exists(dir / part)) throw IoError("store: missing component " + (dir / part).string());
  }
  DataStore store;
  store.frames = read_frame_dir(dir / "frames");
  store.poses = read_frame_dir(dir / "poses");
  store.features = load_features(dir / "features.avsa");
  store.audio = read_wav(dir / "audio.wav");
  store.pose_source = manifest.value("pose_source", "synthetic");
  store.validate();
  return store;
}

void ModelBundle::check_complete() const {
  if (!has_vae()) throw DependencyError("bundle: missing VAE");
  if (!has_blstm()) throw DependencyError("bundle: missing BLSTM or normalization stats");
  if (!has_generator()) throw DependencyError("bundle: missing SeqPix2Pix generator");
  if (blstm_config->output_dim != vae_config->latent_dim) {
    throw ConfigError("bundle: BLSTM output and VAE latent dimensions differ");
  }
  if (blstm_config->input_dim != features.n_mels) throw ConfigError("bundle: BLSTM input differs from mel bands");
  if (s2p_config->image_size != vae_config->image_size) throw ConfigError("bundle: image sizes differ");
  if (norm_stats->mean.numel() != features.n_mels) throw ConfigError("bundle: normalization stats size mismatch");
}

Archive ModelBundle::to_archive() const {
  Archive a("bundle");
  a.meta()["format_version"] = format_version;
  a.meta()["perceptual"] = perceptual_id;
  a.meta()["features"] = feature_json(features);
  a.meta()["window"] = window;
  if (has_vae()) put_vae(a, *this);
  if (has_blstm()) put_blstm(a, *this);
  if (s2p_config) put_s2p_config(a, *this);
  if (has_generator()) a.put_module("generator", *generator);
  if (!discriminator.is_empty()) a.put_module("discriminator", *discriminator);
  if (!predictor.is_empty()) a.put_module("predictor", *predictor);
  return a;
}

ModelBundle ModelBundle::from_archive(const Archive& a) {
  a.expect_kind("bundle");
  ModelBundle b;
  b.format_version = a.meta().value("format_version", 0);
  if (b.format_version != kBundleFormatVersion) throw IoError("bundle: unsupported format version");
  b.perceptual_id = a.meta().value("perceptual", "");
  b.features = feature_from_json(a.meta().at("features"));
  b.window = a.meta().value("window", 15);
  if (a.meta().contains("vae")) get_vae(a, b);
  if (a.meta().contains("blstm")) get_blstm(a, b);
  if (a.meta().contains("seqpix2pix")) {
    b.s2p_config = SeqPix2PixConfig::from_json(a.meta().at("seqpix2pix"));
    auto m = empty_models(*b.s2p_config);
    if (a.contains("generator." + m.generator->named_parameters().keys().front())) {
      a.load_module("generator", *m.generator);
      b.generator = m.generator;
    }
    if (a.contains("discriminator." + m.discriminator->named_parameters().keys().front())) {
      a.load_module("discriminator", *m.discriminator);
      b.discriminator = m.discriminator;
    }
    if (a.contains("predictor." + m.predictor->named_parameters().keys().front())) {
      a.load_module("predictor", *m.predictor);
      b.predictor = m.predictor;
    }
  }
  return b;
}

void ModelBundle::save(const std::filesystem::path& path) const { to_archive().save(path); }

ModelBundle ModelBundle::load(const std::filesystem::path& path) { return from_archive(Archive::load(path)); }

std::string ModelBundle::checksum() const { return sha256_hex(to_archive().to_bytes()); }

void ModelBundle::save_stages(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());
  auto stage = [&](const std::string& kind) {
    Archive a(kind);
    a.meta()["format_version"] = format_version;
    a.meta()["perceptual"] = perceptual_id;
    return a;
  };
  if (has_vae()) {
    auto a = stage("vae");
    put_vae(a, *this);
    a.save(dir / "vae.avsa");
  }
  if (has_blstm()) {
    auto a = stage("blstm");
    put_blstm(a, *this);
    a.save(dir / "blstm.avsa");
  }
  const std::pair<const char*, const torch::nn::Module*> parts[] = {
      {"generator", generator.is_empty() ? nullptr : generator.get()},
      {"discriminator", discriminator.is_empty() ? nullptr : discriminator.get()},
      {"predictor", predictor.is_empty() ? nullptr : predictor.get()},
  };
  for (const auto& [name, module] : parts) {
    if (module == nullptr) continue;
    auto a = stage(std::string("seqpix2pix_") + name);
    put_s2p_config(a, *this);
    a.put_module(name, *module);
    a.save(dir / (std::string(name) + ".avsa"));
  }
}

ModelBundle ModelBundle::load_stages(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("no model directory " + dir.string());
  ModelBundle b;
  auto check = [&](const Archive& a) {
    if (a.meta().value("format_version", 0) != kBundleFormatVersion) {
      throw IoError("checkpoint: unsupported format version");
    }
    b.perceptual_id = a.meta().value("perceptual", b.perceptual_id);
  };
  if (std::filesystem::exists(dir / "vae.avsa")) {
    auto a = Archive::load(dir / "vae.avsa");
    a.expect_kind("vae");
    check(a);
    get_vae(a, b);
  }
  if (std::filesystem::exists(dir / "blstm.avsa")) {
    auto a = Archive::load(dir / "blstm.avsa");
    a.expect_kind("blstm");
    check(a);
    get_blstm(a, b);
  }
  for (const char* name : {"generator", "discriminator", "predictor"}) {
    const auto path = dir / (std::string(name) + ".avsa");
    if (!std::filesystem::exists(path)) continue;
    auto a = Archive::load(path);
    a.expect_kind(std::string("seqpix2pix_") + name);
    check(a);
    b.s2p_config = SeqPix2PixConfig::from_json(a.meta().at("seqpix2pix"));
    auto m = empty_models(*b.s2p_config);
    const std::string n = name;
    if (n == "generator") {
      a.load_module(n, *m.generator);
      b.generator = m.generator;
    } else if (n == "discriminator") {
      a.load_module(n, *m.discriminator);
      b.discriminator = m.discriminator;
    } else {
      a.load_module(n, *m.predictor);
      b.predictor = m.predictor;
    }
  }
  return b;
}

ModelBundle ModelBundle::open(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) {
    if (std::filesystem::exists(path / "bundle.avsa")) return load(path / "bundle.avsa");
    return load_stages(path);
  }
  return load(path);
}

void train_vae_stage(ModelBundle& bundle, const DataStore& store, const PipelineConfig& cfg,
                     const PerceptualExtractor& phi) {
  store.validate();
  cfg.validate();
  if (store.poses.size(2) != cfg.image_size) throw ConfigError("train_vae_stage: store and config image sizes differ");
  auto result = train_vae(store.poses, cfg.vae, cfg.vae_train, phi);
  bundle.vae_config = cfg.vae;
  bundle.vae = result.model;
  bundle.perceptual_id = phi.backend_id();
}

std::pair<torch::Tensor, torch::Tensor> blstm_training_data(const DataStore& store, ModelBundle& bundle,
                                                            int window) {
  if (!bundle.has_vae()) throw DependencyError("BLSTM training needs a trained VAE (run stage 1 first)");
  store.validate();
  const AudioFeatureSequence seqs[] = {store.features};
  if (!bundle.norm_stats) bundle.norm_stats = fit_norm_stats(seqs);
  const auto normalized = normalize(store.features, *bundle.norm_stats);
  auto windows = make_windows(normalized, window).to(torch::kFloat32);
  torch::Tensor codes;
  {
    torch::NoGradGuard guard;
    codes = encode_means(bundle.vae, store.poses).to(torch::kFloat32);
  }
  return {windows, codes};
}

void train_blstm_stage(ModelBundle& bundle, const DataStore& store, const PipelineConfig& cfg) {
  cfg.validate();
  bundle.norm_stats.reset();
  auto [windows, codes] = blstm_training_data(store, bundle, cfg.window);
  auto result = train_blstm(windows, codes, cfg.blstm, cfg.blstm_train);
  bundle.blstm_config = cfg.blstm;
  bundle.blstm = result.model;
  bundle.window = cfg.window;
  bundle.features = cfg.features;
}

namespace {

SeqPix2PixModels fit_s2p(const DataStore& store, const PipelineConfig& cfg, const PerceptualExtractor& phi) {
  return train_seqpix2pix(store.poses, store.frames, cfg.s2p, cfg.s2p_train, phi).models;
}

void assign_s2p(ModelBundle& bundle, const PipelineConfig& cfg, const SeqPix2PixModels& m) {
  bundle.s2p_config = cfg.s2p;
  bundle.generator = m.generator;
  bundle.discriminator = m.discriminator;
  bundle.predictor = m.predictor;
}

}  // namespace

void train_s2p_stage(ModelBundle& bundle, const DataStore& store, const PipelineConfig& cfg,
                     const PerceptualExtractor& phi) {
  if (!bundle.has_vae()) throw DependencyError("SeqPix2Pix training runs in stage 2, after the VAE");
  cfg.validate();
  store.validate();
  assign_s2p(bundle, cfg, fit_s2p(store, cfg, phi));
}

ModelBundle train_all(const DataStore& store, const PipelineConfig& cfg, const PerceptualExtractor& phi) {
  ModelBundle bundle;
  train_vae_stage(bundle, store, cfg, phi);

  auto [windows, codes] = blstm_training_data(store, bundle, cfg.window);
  auto fit_blstm = [&, w = windows, c = codes] { return train_blstm(w, c, cfg.blstm, cfg.blstm_train).model; };
  auto fit_gen = [&] { return fit_s2p(store, cfg, phi); };

  Blstm blstm{nullptr};
  SeqPix2PixModels s2p;
  if (cfg.parallel_stage2) {
    auto a = std::async(std::launch::async, fit_blstm);
    auto b = std::async(std::launch::async, fit_gen);
    blstm = a.get();
    s2p = b.get();
  } else {
    blstm = fit_blstm();
    s2p = fit_gen();
  }
  bundle.blstm_config = cfg.blstm;
  bundle.blstm = blstm;
  bundle.window = cfg.window;
  bundle.features = cfg.features;
  assign_s2p(bundle, cfg, s2p);
  return bundle;
}

namespace {

struct PreparedAudio {
  AudioFeatureSequence normalized;
};

PreparedAudio prepare_audio(const Waveform& audio, ModelBundle& bundle) {
  bundle.check_complete();
  if (audio.duration_seconds() < kMinSynthesisSeconds) {
    throw ConfigError("synthesize: audio must be at least 1 second long");
  }
  const Waveform w = resample(audio, bundle.features.sample_rate);
  checked_rows(bundle.features, w);
  return {normalize(extract_log_mel(w, bundle.features), *bundle.norm_stats)};
}

// Ticks [start, stop) of the streamed synthesis.
SynthesisResult synthesize_block(const AudioFeatureSequence& normalized, ModelBundle& bundle, std::int64_t start,
                                 std::int64_t stop, const FrameStage& frame_stage) {
  torch::NoGradGuard guard;
  const std::int64_t lead = std::min<std::int64_t>(start, bundle.window - 1);
  const auto rows = normalized.rows.slice(0, start - lead, stop);
  auto windows = make_windows(rows, bundle.window).slice(0, lead).to(torch::kFloat32);
  SynthesisResult r;
  r.codes = bundle.blstm->forward(windows);
  r.poses = decode_codes(bundle.vae, r.codes);
  r.frames = frame_stage ? frame_stage(r.poses) : synthesize_frames(bundle.generator, r.poses);
  return r;
}

}  // namespace

SynthesisResult synthesize(const Waveform& audio, ModelBundle& bundle, const SynthesisOptions& opts) {
  const auto prepared = prepare_audio(audio, bundle);
  const std::int64_t total = prepared.normalized.length();
  const std::int64_t chunk = std::max<std::int64_t>(1, opts.chunk);
  std::vector<torch::Tensor> codes, poses, frames;
  for (std::int64_t start = 0; start < total; start += chunk) {
    auto r = synthesize_block(prepared.normalized, bundle, start, std::min(total, start + chunk), opts.frame_stage);
    codes.push_back(r.codes);
    poses.push_back(r.poses);
    frames.push_back(r.frames);
  }
  return {torch::cat(codes), torch::cat(poses), torch::cat(frames)};
}

FrameManifest synthesize_to_dir(const Waveform& audio, ModelBundle& bundle, const std::filesystem::path& out_dir,
                                const SynthesisOptions& opts) {
  const auto prepared = prepare_audio(audio, bundle);
  const std::int64_t total = prepared.normalized.length();
  const std::int64_t chunk = std::max<std::int64_t>(1, opts.chunk);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw IoError("cannot create directory " + out_dir.string());
  for (const auto& old : list_image_files(out_dir)) std::filesystem::remove(old);

  FrameManifest m;
  m.kind = "frames";
  m.fps = bundle.features.frame_rate;
  m.bundle_checksum = bundle.checksum();
  for (std::int64_t start = 0; start < total; start += chunk) {
    const auto r =
        synthesize_block(prepared.normalized, bundle, start, std::min(total, start + chunk), opts.frame_stage);
    for (std::int64_t i = 0; i < r.frames.size(0); ++i) {
      write_image(out_dir / frame_file_name(start + i), r.frames[i]);
    }
    m.height = static_cast<int>(r.frames.size(2));
    m.width = static_cast<int>(r.frames.size(3));
  }
  m.count = total;
  m.checksum = frame_dir_checksum(out_dir);
  write_json(out_dir / "manifest.json", m.to_json());
  return m;
}

FrameManifest export_frames(const torch::Tensor& frames, const std::filesystem::path& out_dir, int fps,
                            std::optional<std::string> bundle_checksum) {
  if (!frames.defined() || frames.dim() != 4 || frames.size(0) < 1) {
    throw ShapeError("export_frames: expected a non-empty [N, 3, H, W] sequence");
  }
  FrameManifest m;
  m.kind = "frames";
  m.fps = fps;
  m.bundle_checksum = std::move(bundle_checksum);
  return write_frame_dir(out_dir, frames, m);
}

}  // namespace avsynth
