#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "support.hpp"

using namespace evrep;
using evrep::testing::TempDir;

// Frozen from tests/oracles/param_count.py
constexpr std::size_t kDefaultParamCount = 2691659;
constexpr std::size_t kTinyStem8ParamCount = 25643;
constexpr std::size_t kStem4MbconvParamCount = 2603;

TEST(GeneratorBuild, ParameterCountsMatchLayerOracle) {
  EXPECT_EQ(Generator<float>::build({}, 0).parameter_count(), kDefaultParamCount);
  EXPECT_EQ(Generator<float>::build(evrep::testing::tiny_config(8, 16, BlockKind::fused), 0).parameter_count(),
            kTinyStem8ParamCount);
  EXPECT_EQ(Generator<float>::build(evrep::testing::tiny_config(4, 8, BlockKind::mbconv), 0).parameter_count(),
            kStem4MbconvParamCount);
}

TEST(GeneratorBuild, DeterministicForSeed) {
  EXPECT_EQ(Generator<float>::build({}, 42).checksum(), Generator<float>::build({}, 42).checksum());
  EXPECT_NE(Generator<float>::build({}, 42).checksum(), Generator<float>::build({}, 43).checksum());
}

TEST(GeneratorBuild, InvalidConfigs) {
  auto expect_invalid = [](GeneratorConfig c) {
    try {
      Generator<float>::build(c, 0);
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::InvalidConfig);
    }
  };
  GeneratorConfig c;
  c.stage_repeats = {1, 1};
  expect_invalid(c);
  c = {};
  c.stage_channels = {48, 0, 160};
  expect_invalid(c);
  c = {};
  c.stage_repeats = {1, 0, 1};
  expect_invalid(c);
  c = {};
  c.stem_channels = 0;
  expect_invalid(c);
  c = {};
  c.output_activation = "tanh";
  expect_invalid(c);
}

TEST(GeneratorBuild, ConfigJsonRoundTrip) {
  GeneratorConfig c = evrep::testing::tiny_config(6, 12, BlockKind::mbconv);
  EXPECT_EQ(nlohmann::json(c).get<GeneratorConfig>(), c);
}

TEST(GeneratorForward, ShapePreservedAndBounded) {
  auto gen = Generator<float>::build({}, 1);
  const auto x = evrep::testing::random_tensor<float>(1, 3, 64, 64, 2);
  const auto y = gen.infer(x);
  EXPECT_EQ(y.shape, (std::array<int, 4>{1, 3, 64, 64}));
  for (float v : y.data) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  const auto z = gen.forward(evrep::testing::random_tensor<float>(2, 3, 16, 24, 3), Mode::train);
  EXPECT_EQ(z->value.shape, (std::array<int, 4>{2, 3, 16, 24}));
}

TEST(GeneratorForward, RejectsMisalignedInput) {
  auto gen = Generator<float>::build({}, 1);
  try {
    gen.infer(evrep::testing::random_tensor<float>(1, 3, 34, 34, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
  EXPECT_THROW(gen.infer(evrep::testing::random_tensor<float>(1, 2, 32, 32, 2)), Error);
}

TEST(GeneratorForward, ZeroHeadGivesHalf) {
  auto gen = Generator<float>::build(evrep::testing::tiny_config(), 5);
  for (auto& p : gen.params())
    if (p.name.rfind("head.", 0) == 0) std::fill(p.var->value.data.begin(), p.var->value.data.end(), 0.0f);
  for (float v : gen.infer(evrep::testing::random_tensor<float>(1, 3, 8, 8, 1)).data) EXPECT_EQ(v, 0.5f);
}

TEST(GeneratorForward, InferenceIsBitwiseReproducible) {
  const auto x = evrep::testing::random_tensor<float>(2, 3, 32, 32, 9);
  const auto a = Generator<float>::build({}, 11).infer(x);
  const auto b = Generator<float>::build({}, 11).infer(x);
  EXPECT_EQ(a.data, b.data);
}

TEST(GeneratorForward, SkipConnectionsMatter) {
  auto gen = Generator<float>::build(evrep::testing::tiny_config(), 3);
  const auto x = evrep::testing::random_tensor<float>(1, 3, 16, 16, 4);
  EXPECT_NE(gen.infer(x).data, gen.infer(x, {true}).data);
}

TEST(GeneratorForward, TrainModeUpdatesRunningStats) {
  auto gen = Generator<float>::build(evrep::testing::tiny_config(), 3);
  const auto before = gen.checksum();
  gen.infer(evrep::testing::random_tensor<float>(2, 3, 16, 16, 4));
  EXPECT_EQ(gen.checksum(), before);
  gen.forward(evrep::testing::random_tensor<float>(2, 3, 16, 16, 4), Mode::train);
  EXPECT_NE(gen.checksum(), before);
}

TEST(GeneratorGradient, MeanOutputMatchesFiniteDifferences) {
  auto gen = Generator<double>::build(evrep::testing::tiny_config(4, 8, BlockKind::mbconv), 17);
  const auto x = evrep::testing::random_tensor<double>(2, 3, 8, 8, 18);
  const auto samples = evrep::testing::generator_gradient_check(gen, x, evrep::testing::mean_output_loss(), 10, 19);
  for (const auto& s : samples) EXPECT_LE(s.rel_error, 1e-3) << s.where << " " << s.analytic << " vs " << s.numeric;
}

TEST(GeneratorGradient, FusedBlocksMatchFiniteDifferences) {
  auto gen = Generator<double>::build(evrep::testing::tiny_config(4, 8, BlockKind::fused), 21);
  const auto x = evrep::testing::random_tensor<double>(2, 3, 8, 8, 22);
  const auto target = evrep::testing::random_tensor<double>(2, 3, 8, 8, 23);
  const auto samples =
      evrep::testing::generator_gradient_check(gen, x, evrep::testing::fidelity_output_loss(target), 10, 24);
  for (const auto& s : samples) EXPECT_LE(s.rel_error, 1e-3) << s.where << " " << s.analytic << " vs " << s.numeric;
}

TEST(GeneratorGradient, EveryParameterReceivesGradient) {
  auto gen = Generator<double>::build(evrep::testing::tiny_config(4, 8, BlockKind::mbconv), 3);
  const auto x = evrep::testing::random_tensor<double>(2, 3, 8, 8, 4);
  auto out = gen.forward(x, Mode::train);
  ag::backward(out, Tensor<double>::like(out->value, 1.0));
  for (auto& p : gen.params()) EXPECT_GT(squared_norm(p.var->grad_buffer()), 0.0) << p.name;
}

TEST(PadToGrid, CeilingArithmetic) {
  const auto p = pad_to_grid(Image(180, 240), 8);
  EXPECT_EQ(p.image.height, 184);
  EXPECT_EQ(p.image.width, 240);
  EXPECT_EQ(p.crop.height, 180);
  EXPECT_EQ(p.crop.width, 240);
}

TEST(PadToGrid, AlignedUnchangedAndCropInverts) {
  const auto img = evrep::testing::random_image(16, 8, 1);
  EXPECT_EQ(pad_to_grid(img, 8).image, img);
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const int h = 1 + int(uniform_below(rng, 30)), w = 1 + int(uniform_below(rng, 30));
    const int f = 1 << uniform_below(rng, 4);
    const auto x = evrep::testing::random_image(h, w, std::uint64_t(i));
    const auto p = pad_to_grid(x, f);
    EXPECT_EQ(p.image.height % f, 0);
    EXPECT_EQ(p.image.width % f, 0);
    EXPECT_EQ(crop(p.image, p.crop), x);
  }
  EXPECT_THROW(pad_to_grid(img, 0), Error);
}

TEST(PadToGrid, ReflectsWithoutRepeatingEdge) {
  Image img(1, 3);
  for (int x = 0; x < 3; ++x) img.at(0, x, 0) = float(x);
  const auto p = pad_to_grid(img, 8);
  EXPECT_EQ(p.image.at(0, 3, 0), 1.0f);
  EXPECT_EQ(p.image.at(0, 4, 0), 0.0f);
  EXPECT_EQ(p.image.at(1, 0, 0), 0.0f);  // height 1 reflects onto itself
}

TEST(Generate, CropsBackToInputSize) {
  auto gen = Generator<float>::build(evrep::testing::tiny_config(), 1);
  const auto out = generate(gen, evrep::testing::random_image(34, 34, 2));
  EXPECT_EQ(out.height, 34);
  EXPECT_EQ(out.width, 34);
}

TEST(Checkpoint, RoundTripExact) {
  TempDir dir;
  auto gen = Generator<float>::build(evrep::testing::tiny_config(), 77);
  gen.forward(evrep::testing::random_tensor<float>(2, 3, 8, 8, 1), Mode::train);  // perturb running stats
  CheckpointMeta meta;
  meta.step = 12;
  meta.metric_tail = nlohmann::json::array({{{"step", 12}, {"dual", 0.5}}});
  std::vector<NamedBuffer<float>> extra{{"note", Tensor<float>(1, 1, 1, 2, 3.5f)}};
  save_checkpoint(dir / "a.ckpt", gen, meta, extra);

  const auto loaded = load_checkpoint<float>(dir / "a.ckpt");
  EXPECT_EQ(loaded.generator.checksum(), gen.checksum());
  EXPECT_EQ(loaded.generator.config(), gen.config());
  EXPECT_EQ(loaded.meta.step, 12u);
  EXPECT_EQ(loaded.meta.metric_tail, meta.metric_tail);
  ASSERT_EQ(loaded.extra_tensors.size(), 1u);
  EXPECT_EQ(loaded.extra_tensors[0].value, extra[0].value);

  auto other = Generator<float>::build(evrep::testing::tiny_config(), 1);
  load_checkpoint_into(dir / "a.ckpt", other);
  EXPECT_EQ(other.checksum(), gen.checksum());
}

TEST(Checkpoint, TruncatedOrCorruptedIsChecksumMismatch) {
  TempDir dir;
  auto gen = Generator<float>::build(evrep::testing::tiny_config(), 7);
  save_checkpoint(dir / "a.ckpt", gen, {});
  auto bytes = evrep::testing::read_text(dir / "a.ckpt");
  evrep::testing::write_file(dir / "trunc.ckpt", bytes.substr(0, bytes.size() / 2));
  bytes[bytes.size() / 2] ^= 0x1;
  evrep::testing::write_file(dir / "flip.ckpt", bytes);
  for (const char* name : {"trunc.ckpt", "flip.ckpt"}) {
    try {
      load_checkpoint<float>(dir / name);
      ADD_FAILURE() << name;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::ChecksumMismatch) << name;
    }
  }
}

TEST(Checkpoint, DifferentArchitectureIsConfigMismatch) {
  TempDir dir;
  save_checkpoint(dir / "a.ckpt", Generator<float>::build(evrep::testing::tiny_config(8, 16), 7), {});
  auto other = Generator<float>::build(evrep::testing::tiny_config(8, 24), 7);
  try {
    load_checkpoint_into(dir / "a.ckpt", other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ConfigMismatch);
  }
  auto dbl = Generator<double>::build(evrep::testing::tiny_config(8, 16), 7);
  EXPECT_THROW(load_checkpoint_into(dir / "a.ckpt", dbl), Error);
}

TEST(Checkpoint, MissingFileIsIOFailure) {
  try {
    load_checkpoint<float>("/nonexistent/x.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IOFailure);
  }
}
