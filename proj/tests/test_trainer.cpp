#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace evrep;
using evrep::testing::TempDir;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 2;
  c.learning_rate = 1e-3;
  c.seed = 9;
  return c;
}

std::vector<TrainSample> small_set(int n = 4) {
  return evrep::testing::to_train_samples(evrep::testing::synthetic_pairs(16, 16, n));
}

double cosine(const Tensor<double>& a, const Tensor<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    ab += a.data[i] * b.data[i];
    aa += a.data[i] * a.data[i];
    bb += b.data[i] * b.data[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST(TrainConfigTest, Validation) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  TrainConfig c;
  c.epochs = -1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.weights = {0, 0};
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(TrainConfig{}.epochs, 50);
  EXPECT_EQ(TrainConfig{}.batch_size, 16);
  EXPECT_EQ(TrainConfig{}.learning_rate, 1e-4);
}

TEST(Spsa, PreconditionsAndQuadraticDirection) {
  Rng rng(1);
  const auto x = evrep::testing::random_tensor<double>(1, 3, 4, 4, 2);
  const auto c = evrep::testing::random_tensor<double>(1, 3, 4, 4, 3);
  auto quad = [&](const Tensor<double>& v) {
    double s = 0;
    for (std::size_t i = 0; i < v.numel(); ++i) s += (v.data[i] - c.data[i]) * (v.data[i] - c.data[i]);
    return s;
  };
  EXPECT_THROW(spsa_gradient(x, quad, 0, 0.05, rng), Error);
  EXPECT_THROW(spsa_gradient(x, quad, 1, 0.0, rng), Error);

  auto analytic = Tensor<double>::like(x);
  for (std::size_t i = 0; i < x.numel(); ++i) analytic.data[i] = 2 * (x.data[i] - c.data[i]);
  auto mean = Tensor<double>::like(x);
  for (int k = 0; k < 1000; ++k) {
    const auto g = spsa_gradient(x, quad, 1, 0.05, rng);
    for (std::size_t i = 0; i < g.numel(); ++i) mean.data[i] += g.data[i] / 1000;
  }
  EXPECT_GE(cosine(mean, analytic), 0.9);
}

TEST(Spsa, BiasDoesNotGrowAsStepShrinks) {
  const auto x = evrep::testing::random_tensor<double>(1, 3, 4, 4, 5);
  const auto c = evrep::testing::random_tensor<double>(1, 3, 4, 4, 6);
  auto quad = [&](const Tensor<double>& v) {
    double s = 0;
    for (std::size_t i = 0; i < v.numel(); ++i) s += (v.data[i] - c.data[i]) * (v.data[i] - c.data[i]);
    return s;
  };
  auto bias = [&](double step) {
    Rng rng(77);
    auto mean = Tensor<double>::like(x);
    for (int k = 0; k < 2000; ++k) {
      const auto g = spsa_gradient(x, quad, 1, step, rng);
      for (std::size_t i = 0; i < g.numel(); ++i) mean.data[i] += g.data[i] / 2000;
    }
    double b = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) b += std::pow(mean.data[i] - 2 * (x.data[i] - c.data[i]), 2);
    return std::sqrt(b);
  };
  EXPECT_LE(bias(1e-2), bias(1e-1) + 1e-9);
}

TEST(Spsa, SemanticGradientUsesBackendOnly) {
  MockBackend mock;
  Rng rng(3);
  const auto out = evrep::testing::random_tensor<float>(2, 3, 8, 8, 1);
  const std::vector<WordSet> rgb{tokenize_words("bright region center, red dominant"),
                                 tokenize_words("uniform dark image")};
  const auto g = semantic_gradient_spsa(out, rgb, mock, 2, 0.05, rng);
  EXPECT_TRUE(g.same_shape(out));
  EXPECT_EQ(mock.call_count(), 2u * 2u * 2u);  // pairs x (plus, minus) x batch
}

TEST(EvaluateSemantic, IdentityAndAdversarial) {
  MockBackend mock;
  std::vector<SemanticPair> pairs;
  for (int i = 0; i < 3; ++i) {
    const auto img = evrep::testing::rectangle_image(12, 12, i, i, i + 5, i + 6, {1.0f, 0.1f, 0.1f});
    pairs.push_back({img, img});
  }
  EXPECT_EQ(evaluate_semantic([](const Image& x) { return x; }, pairs, mock), 0.0);

  evrep::testing::ScriptedBackend adversarial([](const CaptionRequest& r) {
    return r.image.data.empty() || r.image.data[0] < 0.5f ? "alpha beta" : "gamma delta";
  });
  const Image dark(4, 4, 0.0f), bright(4, 4, 1.0f);
  EXPECT_EQ(evaluate_semantic([&](const Image&) { return dark; }, {{bright, bright}}, adversarial), 1.0);
  EXPECT_THROW(evaluate_semantic([](const Image& x) { return x; }, {}, mock), Error);
}

TEST(EvaluateSemantic, ReplayFixtureHandComputedMean) {
  // generated image i -> caption E_i, rgb i -> caption R_i
  const std::vector<std::pair<std::string, std::string>> captions{
      {"a red car", "a blue car"},        // 1 - 2/4 = 0.5
      {"a cat", "a cat"},                 // 0
      {"one two three", "four five six"}  // 1
  };
  std::vector<FixtureEntry> fx;
  std::vector<SemanticPair> pairs;
  const auto prompt = sha256_hex(std::string(kCaptionPrompt));
  for (std::size_t i = 0; i < captions.size(); ++i) {
    const Image gen(3, 3, 0.1f * float(i + 1)), rgb(3, 3, 0.5f + 0.1f * float(i));
    fx.push_back({prompt, image_sha256(gen), captions[i].first});
    fx.push_back({prompt, image_sha256(rgb), captions[i].second});
    pairs.push_back({gen, rgb});
  }
  ReplayBackend replay(fx);
  EXPECT_DOUBLE_EQ(evaluate_semantic([](const Image& x) { return x; }, pairs, replay), 0.5);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<NamedParam<double>> params{{"w", ag::parameter(Tensor<double>(1, 1, 1, 2, 1.0))}};
  params[0].var->grad_buffer().data = {0.5, -2.0};
  Adam<double> adam(params, 0.1, 0.9, 0.999, 1e-8);
  adam.step();
  EXPECT_NEAR(params[0].var->value.data[0], 0.9, 1e-6);
  EXPECT_NEAR(params[0].var->value.data[1], 1.1, 1e-6);
  params[0].var->grad_buffer().data = {3.0, 4.0};
  EXPECT_DOUBLE_EQ(adam.clip_grad_norm(1.0), 5.0);
  EXPECT_NEAR(params[0].var->grad_buffer().data[0], 0.6, 1e-9);
  EXPECT_NEAR(params[0].var->grad_buffer().data[1], 0.8, 1e-9);
}

TEST(Training, ZeroEpochsLeavesParametersUnchanged) {
  TempDir dir;
  MockBackend mock;
  auto gen = Generator<float>::build(evrep::testing::tiny_config(), 1);
  const auto before = gen.checksum();
  auto cfg = small_config();
  cfg.epochs = 0;
  const auto res = train(small_set(), {}, gen, mock, cfg, {dir.path(), {}, {}});
  EXPECT_EQ(gen.checksum(), before);
  EXPECT_TRUE(res.metrics.empty());
  EXPECT_EQ(res.steps, 0u);
  ASSERT_TRUE(res.last_checkpoint);
  EXPECT_EQ(load_checkpoint<float>(*res.last_checkpoint).generator.checksum(), before);
  EXPECT_EQ(mock.call_count(), 0u);
}

TEST(Training, MissingRgbPairNamesSample) {
  TempDir dir;
  const auto manifest =
      evrep::testing::write_synthetic_dataset(dir / "data", evrep::testing::synthetic_pairs(16, 16, 2), {"a"}, false);
  try {
    load_training_samples(load_manifest(manifest));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingRGBPair);
    EXPECT_NE(std::string(e.what()).find("s0"), std::string::npos);
  }
}

TEST(Training, LoadsSamplesFromManifest) {
  TempDir dir;
  const auto pairs = evrep::testing::synthetic_pairs(34, 34, 3);
  const auto manifest = evrep::testing::write_synthetic_dataset(dir / "data", pairs, {"a"});
  const auto samples = load_training_samples(load_manifest(manifest));
  ASSERT_EQ(samples.size(), 3u);
  EXPECT_EQ(samples[1].input.height, 34);
  EXPECT_TRUE(samples[1].rgb.same_shape(samples[1].input));
}

TEST(Training, MetricsRowsSatisfyBreakdownIdentity) {
  TempDir dir;
  MockBackend mock;
  auto gen = Generator<float>::build(evrep::testing::tiny_config(), 2);
  auto cfg = small_config();
  cfg.weights = {0.5, 2.0};
  const auto res = train(small_set(), {}, gen, mock, cfg, {dir.path(), {}, {}});
  ASSERT_EQ(res.metrics.size(), 4u);  // 2 epochs x 2 batches
  for (const auto& r : res.metrics) {
    EXPECT_GE(r.semantic, 0.0);
    EXPECT_LE(r.semantic, 1.0);
    EXPECT_DOUBLE_EQ(r.dual, 0.5 * r.semantic + 2.0 * r.fidelity);
  }
  const auto csv = evrep::testing::read_text(dir / "metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,semantic,fidelity,dual,lr,wall_ms");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Training, LambdaZeroEqualsFidelityOnlyReference) {
  MockBackend mock_a, mock_b;
  auto a = Generator<float>::build(evrep::testing::tiny_config(), 3);
  auto b = Generator<float>::build(evrep::testing::tiny_config(), 3);
  auto cfg = small_config();
  cfg.weights = {0.0, 1.0};
  train(small_set(), {}, a, mock_a, cfg);
  cfg.semantic_strategy = SemanticStrategy::staged;
  train(small_set(), {}, b, mock_b, cfg);
  for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_EQ(a.params()[i].var->value, b.params()[i].var->value);
  EXPECT_EQ(mock_a.call_count(), 0u);
}

TEST(Training, StagedWarmupMakesNoBackendCalls) {
  MockBackend mock;
  auto gen = Generator<float>::build(evrep::testing::tiny_config(), 3);
  auto cfg = small_config();
  cfg.semantic_strategy = SemanticStrategy::staged;
  cfg.warmup_epochs = 2;
  const auto res = train(small_set(), small_set(2), gen, mock, cfg);
  EXPECT_EQ(mock.call_count(), 0u);
  for (const auto& r : res.metrics) EXPECT_TRUE(std::isnan(r.semantic));

  cfg.epochs = 3;
  MockBackend mock2;
  auto gen2 = Generator<float>::build(evrep::testing::tiny_config(), 3);
  const auto res2 = train(small_set(), small_set(2), gen2, mock2, cfg);
  EXPECT_GT(mock2.call_count(), 0u);  // epoch-end validation after warmup
  EXPECT_EQ(res2.val_dual_per_epoch.size(), 1u);
}

TEST(Training, ResumeReproducesNextStepLoss) {
  TempDir full_dir, part_dir;
  const auto data = small_set();
  auto cfg = small_config();
  cfg.epochs = 3;
  cfg.weights = {1.0, 1.0};
  cfg.spsa_pairs = 1;

  MockBackend m1;
  auto g1 = Generator<float>::build(evrep::testing::tiny_config(), 4);
  const auto full = train(data, {}, g1, m1, cfg, {full_dir.path(), {}, {}});
  ASSERT_EQ(full.metrics.size(), 6u);

  auto part_cfg = cfg;
  part_cfg.max_steps = 3;
  MockBackend m2;
  auto g2 = Generator<float>::build(evrep::testing::tiny_config(), 4);
  const auto part = train(data, {}, g2, m2, part_cfg, {part_dir.path(), {}, {}});
  ASSERT_EQ(part.steps, 3u);

  MockBackend m3;
  auto g3 = Generator<float>::build(evrep::testing::tiny_config(), 123);
  const auto resumed = train(data, {}, g3, m3, cfg, {part_dir.path(), *part.last_checkpoint, {}});
  ASSERT_EQ(resumed.metrics.size(), 3u);
  EXPECT_EQ(resumed.metrics[0].step, 4u);
  EXPECT_NEAR(resumed.metrics[0].dual, full.metrics[3].dual, 1e-6);
  EXPECT_NEAR(resumed.metrics[0].fidelity, full.metrics[3].fidelity, 1e-6);
  EXPECT_EQ(g3.checksum(), g1.checksum());
}

TEST(Training, BackendFailureLeavesResumableCheckpoint) {
  TempDir dir;
  ReplayBackend empty(std::vector<FixtureEntry>{});
  auto gen = Generator<float>::build(evrep::testing::tiny_config(), 5);
  try {
    train(small_set(), {}, gen, empty, small_config(), {dir.path(), {}, {}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BackendFailure);
  }
  ASSERT_TRUE(std::filesystem::exists(dir / "last.ckpt"));
  const auto ck = load_checkpoint<float>(dir / "last.ckpt");
  EXPECT_EQ(ck.meta.step, 0u);
  EXPECT_EQ(ck.generator.checksum(), Generator<float>::build(evrep::testing::tiny_config(), 5).checksum());
}

TEST(Training, BestCheckpointTracksValidationDual) {
  TempDir dir;
  MockBackend mock;
  auto gen = Generator<float>::build(evrep::testing::tiny_config(), 6);
  auto cfg = small_config();
  cfg.epochs = 3;
  const auto res = train(small_set(), small_set(2), gen, mock, cfg, {dir.path(), {}, {}});
  ASSERT_EQ(res.val_dual_per_epoch.size(), 3u);
  ASSERT_TRUE(res.best_val_dual);
  EXPECT_EQ(*res.best_val_dual, *std::min_element(res.val_dual_per_epoch.begin(), res.val_dual_per_epoch.end()));
  EXPECT_TRUE(res.best_checkpoint && std::filesystem::exists(*res.best_checkpoint));
}

TEST(Training, RejectsMixedSampleSizes) {
  MockBackend mock;
  auto gen = Generator<float>::build(evrep::testing::tiny_config(), 6);
  auto data = small_set(2);
  auto other = evrep::testing::to_train_samples(evrep::testing::synthetic_pairs(20, 20, 1));
  data.push_back(other[0]);
  EXPECT_THROW(train(data, {}, gen, mock, small_config()), Error);
}
