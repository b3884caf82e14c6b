#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "avsynth/error.hpp"
#include "avsynth/metrics.hpp"
#include "avsynth/pipeline.hpp"
#include "avsynth/rng.hpp"
#include "oracles.hpp"

using namespace avsynth;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny_config(std::uint64_t seed = 5) {
  auto c = PipelineConfig::desk(32);
  c.seed = seed;
  c.blstm.hidden = 16;
  c.vae_train.steps = 4;
  c.vae_train.batch_size = 4;
  c.blstm_train.steps = 4;
  c.blstm_train.batch_size = 16;
  c.s2p_train.steps = 2;
  c.s2p_train.start_stride = 10;
  c.propagate();
  c.validate();
  return c;
}

DataStore tiny_store(std::int64_t n = 45, std::uint64_t seed = 3) {
  SyntheticDatasetConfig dc;
  dc.image_size = 32;
  const auto d = synthesize_lecture_dataset(seed, n, dc);
  return prepare_dataset(d.frames, d.audio, SyntheticPoseProvider{}, tiny_config());
}

Waveform tone(double seconds, int sr = 16000) {
  Waveform w;
  w.sample_rate = sr;
  const auto n = static_cast<std::size_t>(std::llround(seconds * sr));
  for (std::size_t i = 0; i < n; ++i) w.samples.push_back(0.3 * std::sin(0.05 * i) + 0.1 * std::sin(0.31 * i));
  return w;
}

struct EnvGuard {
  std::string name;
  explicit EnvGuard(std::string n, const std::string& value) : name(std::move(n)) { setenv(name.c_str(), value.c_str(), 1); }
  ~EnvGuard() { unsetenv(name.c_str()); }
};

// Shared trained bundle for the inference tests.
ModelBundle& shared_bundle() {
  static ModelBundle bundle = [] {
    auto cfg = tiny_config();
    cfg.parallel_stage2 = false;
    return train_all(tiny_store(), cfg, PerceptualExtractor::random());
  }();
  return bundle;
}

}  // namespace

TEST(Config, DefaultsMatchPublishedValues) {
  const PipelineConfig c;
  EXPECT_EQ(c.frame_rate, 30);
  EXPECT_EQ(c.image_size, 256);
  EXPECT_EQ(c.window, 15);
  EXPECT_EQ(c.memory, 2);
  EXPECT_EQ(c.features.sample_rate, 16000);
  EXPECT_EQ(c.features.n_mels, 40);
  EXPECT_EQ(c.vae.latent_dim, 128);
  EXPECT_DOUBLE_EQ(c.vae_train.lr, 0.00025);
  EXPECT_DOUBLE_EQ(c.blstm_train.lr, 1e-6);
  EXPECT_EQ(c.blstm.hidden, 256);
  EXPECT_DOUBLE_EQ(c.s2p_train.lr, 0.0002);
  EXPECT_DOUBLE_EQ(c.s2p_train.beta1, 0.5);
  EXPECT_DOUBLE_EQ(c.s2p_train.beta2, 0.999);
  EXPECT_DOUBLE_EQ(c.s2p_train.weights.structural, 0.05);
  EXPECT_DOUBLE_EQ(c.s2p_train.weights.temporal_generated, 10.0);
  EXPECT_DOUBLE_EQ(c.s2p_train.weights.temporal_real, 10.0);
  EXPECT_EQ(c.s2p.generator.depth, 7);
  EXPECT_EQ(c.s2p.predictor.in_channels, 6);
  EXPECT_EQ(c.s2p_train.start_stride, 30);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, JsonRoundTripAndLayering) {
  const auto dir = oracle::scratch_dir("config");
  auto c = tiny_config(9);
  c.window = 7;
  c.s2p_train.weights.structural = 0.5;
  c.save(dir / "c.json");
  const auto back = PipelineConfig::load(dir / "c.json");
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.vae_train.seed, derive_seed(9, 101));
  EXPECT_EQ(back.blstm_train.seed, derive_seed(9, 102));
  EXPECT_EQ(back.s2p_train.seed, derive_seed(9, 103));

  // A partial file only overrides what it names.
  std::ofstream(dir / "partial.json") << R"({"window": 5, "seqpix2pix": {"lambda0": 1.0}})";
  const auto layered = PipelineConfig::load(dir / "partial.json", tiny_config(9));
  EXPECT_EQ(layered.window, 5);
  EXPECT_DOUBLE_EQ(layered.s2p_train.weights.structural, 1.0);
  EXPECT_EQ(layered.image_size, 32);
  EXPECT_EQ(layered.vae_train.steps, 4);

  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(PipelineConfig::load(dir / "bad.json"), ConfigError);
  std::ofstream(dir / "mismatch.json") << R"({"image_size": 40})";
  EXPECT_THROW(PipelineConfig::load(dir / "mismatch.json"), ConfigError);
}

TEST(Config, EnvironmentOverrides) {
  auto c = tiny_config(1);
  EXPECT_FALSE(c.apply_env());
  {
    EnvGuard g("AVSYNTH_SEED", "42");
    EXPECT_TRUE(c.apply_env());
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.blstm_train.seed, derive_seed(42, 102));
  }
  {
    EnvGuard g("AVSYNTH_SEED", "abc");
    EXPECT_THROW(c.apply_env(), ConfigError);
  }
  EXPECT_EQ(output_root("fallback"), fs::path("fallback"));
  EnvGuard g("AVSYNTH_OUTPUT_ROOT", "/tmp/root");
  EXPECT_EQ(output_root("fallback"), fs::path("/tmp/root"));
}

TEST(Prepare, AlignsStreams) {
  SyntheticDatasetConfig dc;
  dc.image_size = 48;
  const auto d = synthesize_lecture_dataset(1, 60, dc);
  const auto cfg = tiny_config();
  const auto store = prepare_dataset(d.frames, d.audio, SyntheticPoseProvider{}, cfg);
  EXPECT_EQ(store.length(), 60);
  EXPECT_EQ(store.features.length(), 60);
  EXPECT_EQ(store.poses.size(0), 60);
  EXPECT_EQ(store.frames.sizes(), torch::IntArrayRef({60, 3, 32, 32}));
  // Frames are cropped/resized then stored at 8 bits.
  const auto expect = torch::round(prepare_frame(d.frames[10], 32).to(torch::kFloat64) * 255.0) / 255.0;
  EXPECT_LE((store.frames[10].to(torch::kFloat64) - expect).abs().max().item<double>(), 1e-6);
  EXPECT_NO_THROW(store.validate());

  // One extra frame is trimmed, more is an alignment error.
  const auto extra = torch::cat({d.frames, d.frames.slice(0, 0, 1)});
  EXPECT_EQ(prepare_dataset(extra, d.audio, SyntheticPoseProvider{}, cfg).length(), 60);
  const auto more = torch::cat({d.frames, d.frames.slice(0, 0, 3)});
  EXPECT_THROW(prepare_dataset(more, d.audio, SyntheticPoseProvider{}, cfg), ConfigError);
}

TEST(Prepare, ResamplesAudio) {
  SyntheticDatasetConfig dc;
  dc.image_size = 32;
  dc.sample_rate = 22050;
  const auto d = synthesize_lecture_dataset(2, 30, dc);
  const auto store = prepare_dataset(d.frames, d.audio, SyntheticPoseProvider{}, tiny_config());
  EXPECT_EQ(store.audio.sample_rate, 16000);
  EXPECT_EQ(store.audio.samples.size(), 16000u);
  EXPECT_EQ(store.length(), 30);
}

TEST(Store, RoundTripAndIdempotence) {
  const auto dir = oracle::scratch_dir("store");
  const auto store = tiny_store(40);
  const auto sum = save_store(dir / "a", store);
  EXPECT_EQ(sum, store_checksum(dir / "a"));
  const auto back = load_store(dir / "a");
  EXPECT_TRUE(torch::equal(back.frames, store.frames));
  EXPECT_TRUE(torch::equal(back.poses, store.poses));
  EXPECT_TRUE(torch::equal(back.features.rows, store.features.rows));
  EXPECT_EQ(back.audio.samples, store.audio.samples);

  // Preparing the prepared data again changes nothing.
  const auto again = prepare_dataset(dir / "a" / "frames", dir / "a" / "audio.wav", SyntheticPoseProvider{}, tiny_config());
  EXPECT_EQ(save_store(dir / "b", again), sum);
  EXPECT_EQ(save_store(dir / "a", back), sum);

  fs::remove(dir / "b" / "features.avsa");
  EXPECT_THROW(load_store(dir / "b"), IoError);
  EXPECT_THROW(load_store(dir / "nothing"), IoError);
}

TEST(Stages, OrderingContract) {
  const auto store = tiny_store(40);
  const auto cfg = tiny_config();
  ModelBundle empty;
  EXPECT_THROW(train_blstm_stage(empty, store, cfg), DependencyError);
  EXPECT_THROW(train_s2p_stage(empty, store, cfg, PerceptualExtractor::random()), DependencyError);
  EXPECT_THROW(empty.check_complete(), DependencyError);
  EXPECT_THROW(synthesize(tone(2.0), empty), DependencyError);
  EXPECT_FALSE(empty.complete());

  ModelBundle partial;
  train_vae_stage(partial, store, cfg, PerceptualExtractor::random());
  EXPECT_TRUE(partial.has_vae());
  EXPECT_THROW(partial.check_complete(), DependencyError);
  train_blstm_stage(partial, store, cfg);
  EXPECT_TRUE(partial.has_blstm());
  EXPECT_THROW(synthesize(tone(2.0), partial), DependencyError);

  const auto [x, y] = blstm_training_data(store, partial, cfg.window);
  EXPECT_EQ(x.sizes(), torch::IntArrayRef({40, cfg.window, 40}));
  EXPECT_EQ(y.sizes(), torch::IntArrayRef({40, 128}));
}

TEST(TrainAll, DeterministicAcrossSchedules) {
  const auto store = tiny_store(40);
  auto serial = tiny_config();
  serial.parallel_stage2 = false;
  auto parallel = tiny_config();
  parallel.parallel_stage2 = true;
  const auto a = train_all(store, serial, PerceptualExtractor::random());
  const auto b = train_all(store, parallel, PerceptualExtractor::random());
  EXPECT_TRUE(a.complete());
  EXPECT_NO_THROW(a.check_complete());
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_EQ(a.perceptual_id, "random:0");
  const auto c = train_all(store, tiny_config(6), PerceptualExtractor::random());
  EXPECT_NE(a.checksum(), c.checksum());
}

TEST(Bundle, SaveLoadGivesIdenticalFrames) {
  const auto dir = oracle::scratch_dir("bundle");
  auto& bundle = shared_bundle();
  bundle.save(dir / "bundle.avsa");
  auto loaded = ModelBundle::load(dir / "bundle.avsa");
  EXPECT_EQ(loaded.checksum(), bundle.checksum());
  const auto audio = tone(1.5);
  const auto a = synthesize(audio, bundle), b = synthesize(audio, loaded);
  EXPECT_TRUE(torch::equal(a.frames, b.frames));
  EXPECT_TRUE(torch::equal(a.codes, b.codes));

  bundle.save_stages(dir / "models");
  for (const char* f : {"vae.avsa", "blstm.avsa", "generator.avsa", "discriminator.avsa", "predictor.avsa"}) {
    EXPECT_TRUE(fs::exists(dir / "models" / f)) << f;
  }
  auto staged = ModelBundle::load_stages(dir / "models");
  EXPECT_TRUE(torch::equal(synthesize(audio, staged).frames, a.frames));
  fs::copy_file(dir / "bundle.avsa", dir / "models" / "bundle.avsa");
  EXPECT_EQ(ModelBundle::open(dir / "models").checksum(), bundle.checksum());
  EXPECT_EQ(ModelBundle::open(dir / "bundle.avsa").checksum(), bundle.checksum());

  fs::remove(dir / "models" / "generator.avsa");
  fs::remove(dir / "models" / "bundle.avsa");
  EXPECT_FALSE(ModelBundle::load_stages(dir / "models").has_generator());
  EXPECT_THROW(ModelBundle::load(dir / "missing.avsa"), IoError);
}

TEST(Synthesis, TickConservationAndStreaming) {
  auto& bundle = shared_bundle();
  for (double seconds : {1.0, 1.37, 2.0, 2.51}) {
    const auto r = synthesize(tone(seconds), bundle);
    EXPECT_EQ(r.frames.size(0), std::llround(30.0 * seconds)) << seconds;
    EXPECT_EQ(r.codes.size(0), r.frames.size(0));
    EXPECT_EQ(r.frames.sizes().slice(1), torch::IntArrayRef({3, 32, 32}));
  }
  const auto audio = tone(2.0);
  const auto whole = synthesize(audio, bundle);
  EXPECT_TRUE(torch::equal(whole.frames, synthesize(audio, bundle).frames));
  SynthesisOptions small;
  small.chunk = 7;
  const auto streamed = synthesize(audio, bundle, small);
  EXPECT_TRUE(torch::allclose(streamed.codes, whole.codes, 1e-4, 1e-5));
  EXPECT_TRUE(torch::allclose(streamed.frames, whole.frames, 1e-4, 1e-5));
  EXPECT_THROW(synthesize(tone(0.9), bundle), ConfigError);
  // Other sample rates are resampled first.
  EXPECT_EQ(synthesize(tone(2.0, 22050), bundle).frames.size(0), 60);
}

TEST(Synthesis, FactorizationStub) {
  auto& bundle = shared_bundle();
  SynthesisOptions opts;
  opts.frame_stage = [](const torch::Tensor& poses) { return poses; };
  const auto r = synthesize(tone(1.5), bundle, opts);
  EXPECT_TRUE(torch::equal(r.frames, r.poses));
  torch::NoGradGuard ng;
  EXPECT_TRUE(torch::allclose(r.poses, decode_codes(bundle.vae, r.codes), 1e-5, 1e-6));
}

TEST(Synthesis, StreamingToDirectoryMatchesInMemory) {
  const auto dir = oracle::scratch_dir("synth_dir");
  auto& bundle = shared_bundle();
  const auto audio = tone(2.0);
  SynthesisOptions opts;
  opts.chunk = 16;
  const auto manifest = synthesize_to_dir(audio, bundle, dir / "out", opts);
  EXPECT_EQ(manifest.count, 60);
  EXPECT_EQ(manifest.fps, 30);
  EXPECT_EQ(manifest.bundle_checksum.value_or(""), bundle.checksum());
  const auto frames = read_frame_dir(dir / "out");
  const auto expect = torch::round(synthesize(audio, bundle, opts).frames.to(torch::kFloat64) * 255.0) / 255.0;
  EXPECT_LE((frames.to(torch::kFloat64) - expect).abs().max().item<double>(), 1.0 / 255.0 + 1e-9);
  synthesize_to_dir(audio, bundle, dir / "again", opts);
  EXPECT_EQ(frame_dir_checksum(dir / "out"), frame_dir_checksum(dir / "again"));
}

TEST(Export, ManifestAndChecksums) {
  const auto dir = oracle::scratch_dir("export");
  torch::manual_seed(1);
  const auto frames = torch::rand({60, 3, 8, 8});
  const auto m = export_frames(frames, dir / "a", 30, std::string("feedbeef"));
  EXPECT_EQ(m.count, 60);
  EXPECT_EQ(m.fps, 30);
  EXPECT_EQ(list_image_files(dir / "a").size(), 60u);
  const auto j = nlohmann::json::parse(std::ifstream(dir / "a" / "manifest.json"));
  EXPECT_EQ(j.at("synthetic"), true);
  EXPECT_EQ(j.at("count"), 60);
  EXPECT_EQ(j.at("fps"), 30);
  EXPECT_EQ(j.at("bundle_checksum"), "feedbeef");
  EXPECT_EQ(export_frames(frames, dir / "b").checksum, m.checksum);
  EXPECT_THROW(export_frames(torch::zeros({0, 3, 8, 8}), dir / "c"), ShapeError);
}
