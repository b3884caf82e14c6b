#include <gtest/gtest.h>

#include <random>

#include "avsynth/error.hpp"
#include "avsynth/pose_provider.hpp"
#include "avsynth/rng.hpp"
#include "avsynth/seq_pix2pix.hpp"
#include "oracles.hpp"

using namespace avsynth;

namespace {

SeqPix2PixConfig small(int memory = 2) {
  SeqPix2PixConfig c;
  c.image_size = 16;
  c.memory = memory;
  c.generator = {3, 3, 3, 8, 32};
  c.predictor = {3 * memory, 3, 3, 8, 32};
  c.discriminator = {8, 32};
  return c;
}

LossWeights weights(double l0, double l1, double l2, int memory = 2) {
  LossWeights w;
  w.structural = l0;
  w.temporal_generated = l1;
  w.temporal_real = l2;
  w.memory = memory;
  return w;
}

double mean_abs(const torch::Tensor& a, const torch::Tensor& b) {
  const auto x = oracle::to_vec(a), y = oracle::to_vec(b);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(x[i] - y[i]);
  return acc / static_cast<double>(x.size());
}

std::vector<FigureSpec> figure_track(int n) {
  std::vector<FigureSpec> specs;
  for (int i = 0; i < n; ++i) {
    FigureSpec s;
    s.angles = {0.2 * std::sin(0.4 * i), 0.6 + 0.4 * std::sin(0.3 * i), 0.5, 0.8 + 0.3 * std::cos(0.25 * i), 0.4};
    specs.push_back(s);
  }
  return specs;
}

}  // namespace

TEST(Lsgan, Examples) {
  auto [g1, d1] = lsgan_losses(torch::ones({6}), torch::zeros({6}));
  EXPECT_EQ(d1.item<double>(), 0.0);
  EXPECT_EQ(g1.item<double>(), 1.0);
  auto [g2, d2] = lsgan_losses(torch::full({4}, 0.5), torch::full({4}, 0.5));
  EXPECT_DOUBLE_EQ(d2.item<double>(), 0.5);
  EXPECT_DOUBLE_EQ(g2.item<double>(), 0.25);
  EXPECT_THROW(lsgan_losses(torch::zeros({0}), torch::zeros({3})), ShapeError);
}

TEST(Lsgan, MatchesBruteForce) {
  torch::manual_seed(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto r = torch::randn({7}, torch::kFloat64), f = torch::randn({7}, torch::kFloat64);
    const auto rv = oracle::to_vec(r), fv = oracle::to_vec(f);
    double d = 0.0, g = 0.0;
    for (std::size_t i = 0; i < rv.size(); ++i) {
      d += ((rv[i] - 1.0) * (rv[i] - 1.0) + fv[i] * fv[i]) / 7.0;
      g += (fv[i] - 1.0) * (fv[i] - 1.0) / 7.0;
    }
    auto [gg, dd] = lsgan_losses(r, f);
    EXPECT_NEAR(dd.item<double>(), d, 1e-10);
    EXPECT_NEAR(gg.item<double>(), g, 1e-10);
  }
}

TEST(Models, ShapesRangesAndDeterminism) {
  auto m = SeqPix2PixModels::create(small(), 1);
  torch::manual_seed(2);
  const auto w = torch::rand({3, 16, 16});
  torch::NoGradGuard ng;
  const auto y = generate(m.generator, w);
  EXPECT_EQ(y.sizes(), w.sizes());
  EXPECT_TRUE(torch::equal(y, generate(m.generator, w)));
  EXPECT_GE(y.min().item<float>(), 0.0f);
  EXPECT_LE(y.max().item<float>(), 1.0f);
  EXPECT_THROW(generate(m.generator, torch::rand({1, 16, 16})), ShapeError);

  // One scalar per image, not a patch grid.
  EXPECT_EQ(m.discriminator->forward(torch::rand({5, 3, 16, 16})).sizes(), torch::IntArrayRef({5}));

  const auto next = predict_next(m.predictor, torch::rand({2, 3, 16, 16}), 2);
  EXPECT_EQ(next.sizes(), torch::IntArrayRef({3, 16, 16}));
  const auto hist = torch::rand({2, 3, 16, 16});
  EXPECT_TRUE(torch::equal(predict_next(m.predictor, hist, 2), predict_next(m.predictor, hist, 2)));
  EXPECT_THROW(predict_next(m.predictor, torch::rand({3, 3, 16, 16}), 2), ShapeError);
  EXPECT_THROW(predict_next(m.predictor, torch::rand({1, 3, 16, 16}), 2), ShapeError);

  auto a = SeqPix2PixModels::create(small(), 1).generator->parameters();
  auto b = m.generator->parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(torch::equal(a[i], b[i]));
}

TEST(Models, ConfigValidation) {
  auto c = small();
  c.image_size = 24;
  EXPECT_THROW(SeqPix2PixModels::create(c, 0), ConfigError);
  c = small();
  c.predictor.in_channels = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small();
  c.generator.depth = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(weights(-1.0, 0, 0).validate(), ConfigError);
  const auto back = SeqPix2PixConfig::from_json(small().to_json());
  EXPECT_EQ(back.image_size, 16);
  EXPECT_EQ(back.predictor.in_channels, 6);
  EXPECT_EQ(back.discriminator.base_width, 8);
}

TEST(SynthesizeFrames, ElementwiseGenerate) {
  auto m = SeqPix2PixModels::create(small(), 3);
  torch::manual_seed(3);
  auto poses = torch::rand({7, 3, 16, 16});
  poses[4] = poses[2];
  const auto frames = synthesize_frames(m.generator, poses, 3);
  ASSERT_EQ(frames.size(0), 7);
  torch::NoGradGuard ng;
  for (int i = 0; i < 7; ++i) EXPECT_TRUE(torch::allclose(frames[i], generate(m.generator, poses[i]), 1e-5, 1e-6));
  EXPECT_TRUE(torch::equal(frames[2], frames[4]));
  EXPECT_THROW(synthesize_frames(m.generator, torch::zeros({0, 3, 16, 16})), ShapeError);
}

TEST(Objective, TermByTermOracle) {
  auto m = SeqPix2PixModels::create(small(), 4);
  m.to(torch::kFloat64);
  const auto phi = PerceptualExtractor::random().to(torch::kFloat64);
  torch::manual_seed(4);
  const auto w = torch::rand({2, 3, 3, 16, 16}, torch::kFloat64), y = torch::rand({2, 3, 3, 16, 16}, torch::kFloat64);
  const auto lw = weights(0.05, 10.0, 10.0);
  const auto r = sequence_objective(w, y, m, phi, lw);

  torch::NoGradGuard ng;
  double gan_g = 0.0, gan_d = 0.0, structural = 0.0, tgen = 0.0, treal = 0.0;
  for (int b = 0; b < 2; ++b) {
    std::vector<torch::Tensor> gen;
    for (int i = 0; i < 3; ++i) {
      const auto g = generate(m.generator, w[b][i]);
      gen.push_back(g);
      const double fake = m.discriminator->forward(g.unsqueeze(0)).item<double>();
      const double real = m.discriminator->forward(y[b][i].unsqueeze(0)).item<double>();
      gan_g += (fake - 1.0) * (fake - 1.0) / 6.0;
      gan_d += ((real - 1.0) * (real - 1.0) + fake * fake) / 6.0;
    }
    structural += perceptual_distance(phi, y[b][2], gen[2]) / 2.0;
    tgen += mean_abs(y[b][2], predict_next(m.predictor, torch::stack({gen[0], gen[1]}), 2)) / 2.0;
    treal += mean_abs(y[b][2], predict_next(m.predictor, y[b].slice(0, 0, 2), 2)) / 2.0;
  }
  EXPECT_NEAR(r.gan_g, gan_g, 1e-8);
  EXPECT_NEAR(r.gan_d, gan_d, 1e-8);
  EXPECT_NEAR(r.structural, structural, 1e-8 * std::max(1.0, structural));
  EXPECT_NEAR(r.temporal_gen, tgen, 1e-8);
  EXPECT_NEAR(r.temporal_real, treal, 1e-8);
}

TEST(Objective, IdentitiesOverRandomInputs) {
  auto m = SeqPix2PixModels::create(small(), 5);
  const auto phi = PerceptualExtractor::random();
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  torch::manual_seed(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = torch::rand({1, 3, 3, 16, 16}), y = torch::rand({1, 3, 3, 16, 16});
    const auto lw = weights(u(g) / 20.0, u(g), u(g));
    const auto r = sequence_objective(w, y, m, phi, lw);
    EXPECT_EQ(r.total_g, r.gan_g + lw.structural * r.structural + lw.temporal_generated * r.temporal_gen +
                             lw.temporal_real * r.temporal_real);
    const auto base = sequence_objective(w, y, m, phi, weights(0, 0, 0));
    EXPECT_EQ(base.total_g, base.gan_g);
    // Zero weights leave only the plain adversarial objective.
    torch::NoGradGuard ng;
    const auto fake = m.discriminator->forward(m.generator->forward(w[0]));
    const auto real = m.discriminator->forward(y[0]);
    auto [pg, pd] = lsgan_losses(real, fake);
    EXPECT_NEAR(base.total_g, pg.item<double>(), 1e-6);
    EXPECT_NEAR(base.gan_d, pd.item<double>(), 1e-6);
    // Switching on the structural term strictly raises the total.
    if (base.structural > 0.0) EXPECT_GT(sequence_objective(w, y, m, phi, weights(0.05, 0, 0)).total_g, base.total_g);
  }
}

TEST(Objective, IdealPredictorGivesZeroRealTemporalTerm) {
  auto m = SeqPix2PixModels::create(small(), 6);
  {
    torch::NoGradGuard ng;
    for (auto& p : m.predictor->parameters()) p.zero_();
  }
  // The zeroed predictor emits sigmoid(0) = 0.5 everywhere.
  torch::manual_seed(6);
  auto y = torch::rand({1, 3, 3, 16, 16});
  y.select(1, 2).fill_(0.5);
  const auto r = sequence_objective(torch::rand({1, 3, 3, 16, 16}), y, m, PerceptualExtractor::random(), weights(1, 1, 1));
  EXPECT_EQ(r.temporal_real, 0.0);
  EXPECT_EQ(r.temporal_gen, 0.0);
}

TEST(Objective, ShapeAndMemoryErrors) {
  auto m = SeqPix2PixModels::create(small(), 7);
  const auto phi = PerceptualExtractor::random();
  EXPECT_THROW(sequence_objective(torch::rand({1, 2, 3, 16, 16}), torch::rand({1, 2, 3, 16, 16}), m, phi, weights(1, 1, 1)),
               ShapeError);
  EXPECT_THROW(sequence_objective(torch::rand({1, 3, 3, 16, 16}), torch::rand({1, 3, 3, 16, 16}), m, phi, weights(1, 1, 1, 3)),
               ConfigError);
}

TEST(Objective, GradientsMatchFiniteDifferences) {
  auto m = SeqPix2PixModels::create(small(), 8);
  m.to(torch::kFloat64);
  // Move away from the near-zero initial activations so probes rarely cross a ReLU kink.
  torch::manual_seed(18);
  {
    torch::NoGradGuard ng;
    for (auto* mod : {static_cast<torch::nn::Module*>(m.generator.get()), static_cast<torch::nn::Module*>(m.predictor.get()),
                      static_cast<torch::nn::Module*>(m.discriminator.get())}) {
      for (auto& p : mod->parameters()) {
        if (p.dim() > 1) {
          p.normal_(0.0, std::sqrt(2.0 / static_cast<double>(p.numel() / p.size(0))));
        } else {
          p.normal_(0.0, 0.5);
        }
      }
    }
  }
  const auto phi = PerceptualExtractor::random().to(torch::kFloat64);
  torch::manual_seed(8);
  const auto w = torch::rand({1, 3, 3, 16, 16}, torch::kFloat64), y = torch::rand({1, 3, 3, 16, 16}, torch::kFloat64);
  const auto lw = weights(0.05, 10.0, 10.0);
  auto loss = [&] { return sequence_objective_terms(w, y, m, phi, lw).total_g; };
  std::vector<torch::Tensor> params;
  for (auto& p : m.generator->parameters()) params.push_back(p);
  for (auto& p : m.predictor->parameters()) params.push_back(p);
  for (auto& p : params) p.mutable_grad() = torch::Tensor();
  loss().backward();
  std::vector<torch::Tensor> grads;
  for (auto& p : params) grads.push_back(p.grad().clone());
  EXPECT_LT(oracle::gradient_check([&] { return loss().item<double>(); }, params, grads, 6, 3, 1e-5), 1e-4);
}

TEST(MakeClips, WindowsAndStride) {
  torch::manual_seed(9);
  const auto p = torch::rand({10, 3, 8, 8}), f = torch::rand({10, 3, 8, 8});
  auto [cp, cf] = make_clips(p, f, 2, 3);
  ASSERT_EQ(cp.sizes(), torch::IntArrayRef({3, 3, 3, 8, 8}));
  for (int k = 0; k < 3; ++k) {
    EXPECT_TRUE(torch::equal(cp[k], p.slice(0, 3 * k, 3 * k + 3)));
    EXPECT_TRUE(torch::equal(cf[k], f.slice(0, 3 * k, 3 * k + 3)));
  }
  EXPECT_EQ(make_clips(p, f, 2, 1).first.size(0), 8);
  EXPECT_THROW(make_clips(p.slice(0, 0, 2), f.slice(0, 0, 2), 2, 1), ShapeError);
  EXPECT_THROW(make_clips(p, f, 2, 0), ConfigError);
}

TEST(Train, ZeroLearningRateAndDeterminism) {
  torch::manual_seed(10);
  const auto p = torch::rand({6, 3, 16, 16}), f = torch::rand({6, 3, 16, 16});
  const auto phi = PerceptualExtractor::random();
  SeqTrainConfig tc;
  tc.weights = weights(0.05, 10, 10);
  tc.lr = 0.0;
  tc.steps = 2;
  tc.start_stride = 1;
  tc.seed = 4;
  auto still = train_seqpix2pix(p, f, small(), tc, phi);
  auto init = SeqPix2PixModels::create(small(), derive_seed(4, 1));
  auto a = still.models.generator->parameters(), b = init.generator->parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(torch::equal(a[i], b[i]));
  auto da = still.models.discriminator->parameters(), db = init.discriminator->parameters();
  for (std::size_t i = 0; i < da.size(); ++i) EXPECT_TRUE(torch::equal(da[i], db[i]));

  tc.lr = 2e-4;
  tc.steps = 5;
  const auto r1 = train_seqpix2pix(p, f, small(), tc, phi), r2 = train_seqpix2pix(p, f, small(), tc, phi);
  ASSERT_EQ(r1.history.size(), 5u);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(r1.history[i].total_g, r2.history[i].total_g);
  auto g1 = r1.models.generator->parameters(), g2 = r2.models.generator->parameters();
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_TRUE(torch::equal(g1[i], g2[i]));
  EXPECT_THROW(train_seqpix2pix(torch::zeros({0, 3, 16, 16}), torch::zeros({0, 3, 16, 16}), small(), tc, phi), ConfigError);
}

TEST(Train, OverfitsOnePair) {
  const auto spec = figure_track(1)[0];
  const auto w = render_synthetic_pose(spec, 16), y = render_synthetic_frame(spec, 16);
  const auto clip_w = w.unsqueeze(0).repeat({3, 1, 1, 1}), clip_y = y.unsqueeze(0).repeat({3, 1, 1, 1});
  SeqTrainConfig tc;
  tc.weights = weights(10, 10, 10);
  tc.lr = 2e-3;
  tc.steps = 300;
  tc.start_stride = 1;
  tc.seed = 1;
  auto r = train_seqpix2pix(clip_w, clip_y, small(), tc, PerceptualExtractor::random());
  torch::NoGradGuard ng;
  EXPECT_LT(mean_abs(generate(r.models.generator, w), y), 0.02);
}

TEST(Train, PredictorLearnsConstantVideo) {
  const auto frame = render_synthetic_frame(figure_track(1)[0], 16);
  const auto video = frame.unsqueeze(0).repeat({6, 1, 1, 1});
  SeqTrainConfig tc;
  tc.weights = weights(0.05, 10, 10);
  tc.lr = 2e-3;
  tc.steps = 200;
  tc.start_stride = 1;
  tc.seed = 2;
  auto r = train_seqpix2pix(video, video, small(), tc, PerceptualExtractor::random());
  torch::NoGradGuard ng;
  EXPECT_LT(mean_abs(predict_next(r.models.predictor, video.slice(0, 0, 2), 2), frame), 0.02);
}
