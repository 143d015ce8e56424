#include "korol/errors.hpp"
#include "korol/featnet.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace korol;

namespace {

Architecture tiny(Pooling pooling = Pooling::kFlatten, int goal_dim = 0) {
  Architecture a;
  a.in_channels = 2;
  a.side = 8;
  a.feature_dim = 3;
  a.goal_dim = goal_dim;
  a.conv_channels = {3, 4, 4};
  a.hidden = 5;
  a.pooling = pooling;
  return a;
}

ImageStack random_stack(Pcg32& rng, int c, int side) {
  ImageStack img(c, side, side);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

// Fresh He-initialized weights with nonzero biases so that ReLUs sit away
// from their kinks.
FeatNetParams random_params(std::uint64_t seed, const Architecture& arch) {
  auto p = init_params(seed, arch);
  Pcg32 rng(seed, 99);
  for (auto t : p.tensors())
    for (auto& v : t) v += rng.uniform(0.0, 0.1);
  return p;
}

}  // namespace

TEST(InitParams, DeterministicPerSeed) {
  const Architecture arch;
  const auto a = init_params(0, arch), b = init_params(0, arch), c = init_params(1, arch);
  bool differs = false;
  const auto ta = a.tensors(), tb = b.tensors(), tc = c.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_TRUE(std::equal(ta[i].begin(), ta[i].end(), tb[i].begin()));
    differs |= !std::equal(ta[i].begin(), ta[i].end(), tc[i].begin());
  }
  EXPECT_TRUE(differs);
}

TEST(InitParams, ShapesAndBiases) {
  Architecture arch;
  arch.in_channels = 4;
  const auto p = init_params(0, arch);
  EXPECT_EQ(p.conv[0].weight.rows(), 16);
  EXPECT_EQ(p.conv[0].weight.cols(), 4 * 3 * 3);
  EXPECT_EQ(p.hidden.weight.cols(), arch.head_inputs());
  EXPECT_EQ(p.output.weight.rows(), 8);
  EXPECT_TRUE(p.conv[0].bias.isZero(0.0));
  EXPECT_EQ(p.tensors().size(), 10u);
}

TEST(InitParams, HeStandardDeviation) {
  Architecture arch;
  arch.conv_channels = {64, 32, 32};
  const auto p = init_params(3, arch);
  const auto& w = p.conv[1].weight;  // fan_in = 64 * 9
  const double var = w.array().square().mean();
  EXPECT_NEAR(var, 2.0 / (64 * 9), 0.1 * 2.0 / (64 * 9));
}

TEST(HarmonicEmbed, Zero) {
  Vec want(15);
  want << 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1;
  EXPECT_EQ(harmonic_embed(Vec::Zero(3)), want);
}

TEST(HarmonicEmbed, HalfTurn) {
  const Vec e = harmonic_embed(Eigen::Vector3d(0.5, 0, 0));
  EXPECT_EQ(e.size(), 15);
  EXPECT_NEAR(e[3], std::sin(std::numbers::pi / 2), 1e-15);
  EXPECT_THROW(harmonic_embed(Vec::Zero(2)), DimensionError);
}

TEST(Forward, ZeroInputFreshParamsGivesZeroFeature) {
  const Architecture arch;
  const auto p = init_params(0, arch);
  const auto r = forward(p, ImageStack(2, 32, 32));
  EXPECT_TRUE(r.feature.isZero(0.0));
  EXPECT_EQ(r.feature.size(), 8);
}

TEST(Forward, MatchesDirectConvolution) {
  Pcg32 rng(1);
  for (auto pooling : {Pooling::kFlatten, Pooling::kGlobalAverage}) {
    Architecture arch;
    arch.pooling = pooling;
    const auto p = random_params(2, arch);
    const auto img = random_stack(rng, 2, 32);
    EXPECT_LT((forward(p, img).feature - oracle::featnet(p, img)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Forward, DeterministicAndReplayable) {
  Pcg32 rng(2);
  const auto p = random_params(3, Architecture{});
  const auto img = random_stack(rng, 2, 32);
  const auto a = forward(p, img);
  const auto b = forward(p, img);
  EXPECT_EQ(a.feature, b.feature);
  EXPECT_EQ(predict(p, img), a.feature);
  EXPECT_EQ(a.cache.feature, a.feature);
  EXPECT_EQ(a.cache.input.data, img.data);
}

TEST(Forward, RejectsMismatchedInputs) {
  const auto p = init_params(0, Architecture{});
  EXPECT_THROW(forward(p, ImageStack(3, 32, 32)), DimensionError);
  EXPECT_THROW(forward(p, ImageStack(2, 32, 32), Vec::Zero(3)), DimensionError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Pcg32 rng(4);
  const auto p = random_params(5, tiny());
  const auto r = forward(p, random_stack(rng, 2, 8));
  const auto g = backward(p, r.cache, Vec::Zero(3));
  for (auto t : g.grads.tensors())
    for (double v : t) EXPECT_EQ(v, 0.0);
  for (double v : g.d_pixels.data) EXPECT_EQ(v, 0.0);
}

TEST(Backward, RejectsStaleCache) {
  Pcg32 rng(6);
  auto p = random_params(7, tiny());
  const auto r = forward(p, random_stack(rng, 2, 8));
  auto state = AdamState::zeros_like(p);
  adam_step(p, FeatNetParams::zeros(p.arch), state, {});
  EXPECT_THROW(backward(p, r.cache, Vec::Ones(3)), Error);
}

TEST(Backward, PixelGradientMatchesCentralDifferences) {
  Pcg32 rng(8);
  for (auto pooling : {Pooling::kFlatten, Pooling::kGlobalAverage}) {
    const auto p = random_params(9, tiny(pooling));
    const auto img = random_stack(rng, 2, 8);
    const Vec up = oracle::random_vec(rng, 3);
    const auto r = forward(p, img);
    const auto g = backward(p, r.cache, up);
    const Vec x0 = Eigen::Map<const Vec>(img.data.data(), static_cast<Eigen::Index>(img.data.size()));
    const auto f = [&](const Vec& x) {
      ImageStack s = img;
      std::copy(x.begin(), x.end(), s.data.begin());
      return predict(p, s).dot(up);
    };
    const Vec fd = oracle::gradient(f, x0, 1e-5);
    const Vec got = Eigen::Map<const Vec>(g.d_pixels.data.data(), fd.size());
    EXPECT_LT(oracle::rel_error(got, fd), 1e-4);
  }
}

TEST(Backward, ParameterGradientsMatchCentralDifferences) {
  Pcg32 rng(10);
  for (int goal_dim : {0, kGoalDim}) {
    auto p = random_params(11, tiny(Pooling::kFlatten, goal_dim));
    const auto img = random_stack(rng, 2, 8);
    const std::optional<Vec> goal = goal_dim ? std::optional<Vec>(oracle::random_vec(rng, 3)) : std::nullopt;
    const Vec up = oracle::random_vec(rng, 3);
    const auto g = backward(p, forward(p, img, goal).cache, up);
    auto tensors = p.tensors();
    const auto grads = g.grads.tensors();
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      const Vec x0 = Eigen::Map<const Vec>(tensors[k].data(), static_cast<Eigen::Index>(tensors[k].size()));
      const auto f = [&](const Vec& x) {
        std::copy(x.begin(), x.end(), tensors[k].begin());
        const double out = predict(p, img, goal).dot(up);
        std::copy(x0.begin(), x0.end(), tensors[k].begin());
        return out;
      };
      const Vec fd = oracle::gradient(f, x0, 1e-5);
      const Vec got = Eigen::Map<const Vec>(grads[k].data(), fd.size());
      EXPECT_LT(oracle::rel_error(got, fd), 1e-4) << "tensor " << k;
    }
  }
}

TEST(Adam, ZeroGradientLeavesParametersButCountsStep) {
  auto p = init_params(0, tiny());
  const auto before = p.tensors();
  std::vector<std::vector<double>> copy;
  for (auto t : before) copy.emplace_back(t.begin(), t.end());
  auto state = AdamState::zeros_like(p);
  adam_step(p, FeatNetParams::zeros(p.arch), state, {});
  EXPECT_EQ(state.step, 1u);
  const auto after = p.tensors();
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_TRUE(std::equal(after[i].begin(), after[i].end(), copy[i].begin()));
}

TEST(Adam, FirstStepHandValue) {
  auto p = FeatNetParams::zeros(tiny());
  auto g = FeatNetParams::zeros(tiny());
  g.output.bias[0] = 1.0;
  auto state = AdamState::zeros_like(p);
  adam_step(p, g, state, AdamOptions{1e-4, 0.9, 0.999, 1e-8});
  EXPECT_NEAR(p.output.bias[0], -1e-4 / (1.0 + 1e-8), 1e-18);
  EXPECT_EQ(p.output.bias[1], 0.0);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    auto p = init_params(1, tiny());
    auto state = AdamState::zeros_like(p);
    Pcg32 rng(2);
    for (int i = 0; i < 5; ++i) {
      auto g = FeatNetParams::zeros(p.arch);
      for (auto t : g.tensors())
        for (auto& v : t) v = rng.normal();
      adam_step(p, g, state, {});
    }
    return p;
  };
  const auto a = run(), b = run();
  const auto ta = a.tensors(), tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) EXPECT_TRUE(std::equal(ta[i].begin(), ta[i].end(), tb[i].begin()));
}

TEST(Heatmap, ZeroActivationsGiveZeroMap) {
  const auto p = init_params(0, Architecture{});
  const auto r = forward(p, ImageStack(2, 32, 32));
  const RowMat h = activation_heatmap(r.cache);
  EXPECT_EQ(h.rows(), 32);
  EXPECT_EQ(h.cols(), 32);
  EXPECT_TRUE(h.isZero(0.0));
}

TEST(Heatmap, NormalizedToUnitRange) {
  Pcg32 rng(12);
  const auto p = random_params(13, Architecture{});
  const RowMat h = activation_heatmap(forward(p, random_stack(rng, 2, 32)).cache);
  EXPECT_EQ(h.minCoeff(), 0.0);
  EXPECT_EQ(h.maxCoeff(), 1.0);
}
