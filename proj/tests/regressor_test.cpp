#include <gtest/gtest.h>

#include <cmath>

#include "cforge/error.hpp"
#include "cforge/regressor.hpp"
#include "cforge/stats.hpp"
#include "support.hpp"

using namespace cforge;
using cforge::testing::random_vector;

namespace {

RegressorConfig quick(std::size_t epochs = 200) {
  RegressorConfig c;
  c.epochs = epochs;
  c.seed = 5;
  return c;
}

// Smooth target on the latent box.
double target(const std::vector<double>& z) { return 0.8 + 0.3 * z[0] - 0.2 * z[1] * z[2] + 0.1 * std::sin(3 * z[3]); }

std::vector<std::vector<double>> latents(Rng& rng, std::size_t n) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_vector(rng, 8));
  return out;
}

Regressor random_regressor(Rng& rng) {
  const LayerSpec specs[] = {{64, Activation::leaky_relu(), 0.1}, {64, Activation::leaky_relu(), 0.1},
                             {1, Activation::relu(), 0.0}};
  auto m = cforge::testing::random_mlp(rng, 8, {specs, specs + 3});
  m.mutable_layers().back().bias[0] = 2.0;
  return Regressor(std::move(m));
}

}  // namespace

TEST(Regressor, ConstantTargetIsFitted) {
  Rng rng(1);
  const auto z = latents(rng, 80);
  const std::vector<double> y(80, 0.7);
  const auto r = train_regressor(z, y, quick(500));
  for (const auto& v : latents(rng, 20)) EXPECT_NEAR(predict(r.model, v), 0.7, 0.035);
}

TEST(Regressor, BeatsTheMeanPredictor) {
  Rng rng(2);
  const auto z = latents(rng, 300);
  std::vector<double> y;
  for (const auto& v : z) y.push_back(target(v));
  RegressorConfig c = quick(300);
  c.val_fraction = 0.25;
  const auto r = train_regressor(z, y, c);
  // Validation variance recomputed from the same seeded split.
  Rng split(mix_seed(c.seed, 3));
  const auto order = split.permutation(z.size());
  std::vector<double> vy;
  for (std::size_t i = 0; i < 75; ++i) vy.push_back(y[order[i]]);
  const double var = std::pow(stats::stddev(vy), 2);
  EXPECT_LT(r.val_mse, 0.5 * var);
}

TEST(Regressor, TrainingIsDeterministic) {
  Rng rng(3);
  const auto z = latents(rng, 40);
  std::vector<double> y;
  for (const auto& v : z) y.push_back(target(v));
  const auto a = train_regressor(z, y, quick(20));
  const auto b = train_regressor(z, y, quick(20));
  EXPECT_EQ(a.model.net(), b.model.net());
  EXPECT_EQ(a.val_mse, b.val_mse);
}

TEST(Regressor, RejectsBadInput) {
  Rng rng(4);
  const auto z = latents(rng, 4);
  EXPECT_THROW(train_regressor(z, std::vector<double>{1, 2, 3}, quick()), InvalidInput);
  EXPECT_THROW(train_regressor(z, std::vector<double>{1, -2, 3, 4}, quick()), InvalidInput);
  auto m = random_regressor(rng).net();
  m.mutable_layers().back().activation = Activation::identity();
  EXPECT_THROW(Regressor{m}, InvalidInput);
}

TEST(Regressor, NonNegativeOnTheLatentGrid) {
  Rng rng(5);
  const auto reg = random_regressor(rng);
  std::vector<double> z(8);
  std::size_t zeros = 0;
  for (int code = 0; code < 6561; ++code) {
    int c = code;
    for (int k = 0; k < 8; ++k, c /= 3) z[k] = -1.0 + (c % 3);
    const double y = predict(reg, z);
    EXPECT_GE(y, 0.0);
    EXPECT_TRUE(std::isfinite(y));
    zeros += y == 0.0;
  }
  EXPECT_LT(zeros, 6561u);
}

TEST(Regressor, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  const auto reg = random_regressor(rng);
  const double h = 1e-6;
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    auto z = random_vector(rng, 8);
    if (predict(reg, z) <= 1e-6) continue;
    const auto g = grad_wrt_latent(reg, z);
    ASSERT_EQ(g.size(), 8u);
    for (int k = 0; k < 8; ++k) {
      auto zp = z, zm = z;
      zp[k] += h;
      zm[k] -= h;
      const double fd = (predict(reg, zp) - predict(reg, zm)) / (2 * h);
      EXPECT_LT(std::abs(fd - g[k]) / std::max({std::abs(fd), std::abs(g[k]), 1e-3}), 1e-5);
    }
    ++checked;
  }
  EXPECT_GT(checked, 50);
}

TEST(Regressor, DeadOutputHasZeroGradient) {
  Rng rng(7);
  auto m = random_regressor(rng).net();
  m.mutable_layers().back().bias[0] = -1e6;
  const Regressor reg(m);
  const auto z = random_vector(rng, 8);
  EXPECT_EQ(predict(reg, z), 0.0);
  for (double g : grad_wrt_latent(reg, z)) EXPECT_EQ(g, 0.0);
}

TEST(Regressor, PersistenceTiesToTheAutoEncoder) {
  cforge::testing::TempDir dir("reg");
  Rng rng(8);
  const auto reg = random_regressor(rng);
  RegressorMetadata meta;
  meta.ae_hash = "aaaa";
  save_regressor(dir / "reg.txt", reg, meta);
  const auto loaded = load_regressor(dir / "reg.txt", "aaaa");
  EXPECT_EQ(loaded.model.net(), reg.net());
  EXPECT_THROW(load_regressor(dir / "reg.txt", "bbbb"), HashMismatch);
}
