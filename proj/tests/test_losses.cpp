#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "support.hpp"

using namespace evrep;

// Frozen from tests/oracles/fidelity_bruteforce.py
constexpr double kStepVsConstant8x8 = 3.9999980000004971;
constexpr double kColumnStepVsConstant6x5 = 0.57216544320079976;

namespace {

WordSet words(std::initializer_list<const char*> w) {
  WordSet s;
  for (const char* x : w) s.words.insert(x);
  return s;
}

BasicImage<double> step_image(int h, int w, int split) {
  BasicImage<double> img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = split; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = 1.0;
  return img;
}

BasicImage<double> random_dimage(int h, int w, std::uint64_t seed) {
  return evrep::testing::random_image(h, w, seed).cast<double>();
}

BasicImage<double> rot90(const BasicImage<double>& img) {
  // counter-clockwise: out(y, x) = in(x, W-1-y)
  BasicImage<double> out(img.width, img.height);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(x, img.width - 1 - y, c);
  return out;
}

}  // namespace

TEST(Tokenize, LowercasesAndSplits) {
  EXPECT_EQ(tokenize_words("A red Car."), words({"a", "red", "car"}));
  EXPECT_TRUE(tokenize_words("").empty());
  EXPECT_EQ(tokenize_words("car car CAR"), words({"car"}));
  EXPECT_EQ(tokenize_words("left-top, x2_y3!"), words({"left", "top", "x2", "y3"}));
}

TEST(Tokenize, KeepsUtf8BytesInsideWords) {
  EXPECT_EQ(tokenize_words("caf\xc3\xa9 ok"), words({"caf\xc3\xa9", "ok"}));
}

TEST(Jaccard, HandComputedValues) {
  EXPECT_EQ(jaccard_loss("a red car", "a blue car"), 0.5);
  EXPECT_EQ(jaccard_loss("same words", "Words same"), 0.0);
  EXPECT_EQ(jaccard_loss("cat", "dog"), 1.0);
  EXPECT_EQ(jaccard_loss("", ""), 0.0);
  EXPECT_EQ(jaccard_loss("", "x"), 1.0);
}

TEST(Jaccard, SymmetricAndBounded) {
  Rng rng(4);
  const char* vocab[] = {"a", "red", "car", "dog", "the", "image", "bright", "dark"};
  for (int i = 0; i < 500; ++i) {
    std::string a, b;
    for (int k = 0; k < int(uniform_below(rng, 6)); ++k) a += std::string(vocab[uniform_below(rng, 8)]) + " ";
    for (int k = 0; k < int(uniform_below(rng, 6)); ++k) b += std::string(vocab[uniform_below(rng, 8)]) + ",";
    const double l = jaccard_loss(a, b);
    EXPECT_EQ(l, jaccard_loss(b, a));
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 1.0);
    EXPECT_EQ(jaccard_loss(a, a), 0.0);
  }
}

TEST(Sobel, ConstantImageVanishes) {
  const auto m = sobel_edge_map(BasicImage<double>(7, 9, 0.37));
  EXPECT_EQ(m.source, EdgeSource::output);
  for (double v : m.values) EXPECT_LE(v, 1e-6);
}

TEST(Sobel, StepEdgeInteriorIsFour) {
  const auto m = sobel_edge_map(step_image(8, 8, 4));
  for (int y = 1; y < 7; ++y) {
    EXPECT_NEAR(m.at(y, 3), 4.0, 1e-9);
    EXPECT_NEAR(m.at(y, 4), 4.0, 1e-9);
    EXPECT_LE(m.at(y, 1), 1e-6);
  }
}

TEST(Sobel, RotationEquivariant) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto img = random_dimage(8, 8, seed);
    const auto a = sobel_edge_map(rot90(img));
    const auto g = sobel_edge_map(img);
    BasicImage<double> gimg(8, 8);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) gimg.at(y, x, 0) = g.at(y, x);
    const auto rg = rot90(gimg);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) EXPECT_NEAR(a.at(y, x), rg.at(y, x, 0), 1e-12);
  }
}

TEST(Sobel, NonnegativeAndFinite) {
  const auto m = sobel_edge_map(random_dimage(5, 11, 3), EdgeSource::target);
  EXPECT_EQ(m.source, EdgeSource::target);
  for (double v : m.values) {
    EXPECT_GE(v, 0.0);
    EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Fidelity, IdenticalAndConstantImages) {
  const auto img = random_dimage(9, 9, 1);
  EXPECT_LE(fidelity_loss(img, img), 1e-12);
  EXPECT_LE(fidelity_loss(BasicImage<double>(6, 6, 0.1), BasicImage<double>(6, 6, 0.9)), 1e-10);
}

TEST(Fidelity, MatchesBruteForceOracle) {
  EXPECT_NEAR(fidelity_loss(step_image(8, 8, 4), BasicImage<double>(8, 8, 0.5)), kStepVsConstant8x8, 1e-12);

  BasicImage<double> img(6, 5);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 5; ++x) {
      img.at(y, x, 0) = x < 2 ? 0.0 : 1.0;
      img.at(y, x, 1) = 0.2;
      img.at(y, x, 2) = 0.7;
    }
  EXPECT_NEAR(fidelity_loss(img, BasicImage<double>(6, 5, 0.3)), kColumnStepVsConstant6x5, 1e-12);
}

TEST(Fidelity, SymmetricAndOffsetInvariant) {
  auto a = random_dimage(7, 6, 2), b = random_dimage(7, 6, 3);
  EXPECT_NEAR(fidelity_loss(a, b), fidelity_loss(b, a), 1e-15);
  const double base = fidelity_loss(a, b);
  for (auto& v : a.data) v += 0.25;
  for (auto& v : b.data) v += 0.25;
  EXPECT_NEAR(fidelity_loss(a, b), base, 1e-10);
}

TEST(Fidelity, ShapeMismatch) {
  try {
    fidelity_loss(BasicImage<double>(4, 4), BasicImage<double>(4, 5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
}

TEST(Fidelity, TensorAndImagePathsAgree) {
  const auto a = random_dimage(6, 7, 8), b = random_dimage(6, 7, 9);
  const auto r = fidelity_loss_and_grad(image_to_tensor<double>(a), image_to_tensor<double>(b));
  EXPECT_NEAR(r.loss, fidelity_loss(a, b), 1e-14);
}

TEST(Fidelity, GradientMatchesFiniteDifferences) {
  const auto out = evrep::testing::random_tensor<double>(2, 3, 7, 6, 10);
  const auto target = evrep::testing::random_tensor<double>(2, 3, 7, 6, 11);
  for (const auto& s : evrep::testing::fidelity_image_gradient_check(out, target, 25, 12)) {
    EXPECT_LE(s.rel_error, 1e-3) << s.where << " " << s.analytic << " vs " << s.numeric;
  }
}

TEST(DualLoss, Arithmetic) {
  EXPECT_DOUBLE_EQ(dual_loss(0.5, 0.2, {1, 1}).dual, 0.7);
  EXPECT_EQ(dual_loss(0.5, 0.2, {3, 0}).dual, 1.5);
  const auto b = dual_loss(0.4, 0.8, {2, 0.5});
  EXPECT_DOUBLE_EQ(b.dual, 1.2);
  EXPECT_EQ(b.dual - (b.lambda * b.semantic + b.gamma * b.fidelity), 0.0);
}

TEST(DualLoss, InvalidWeights) {
  for (LossWeights w : {LossWeights{0, 0}, LossWeights{-1, 1}, LossWeights{1, -0.5}}) {
    try {
      dual_loss(0.1, 0.1, w);
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::InvalidWeights);
    }
  }
}
