#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "cforge/error.hpp"
#include "cforge/explore.hpp"
#include "cforge/io.hpp"
#include "support.hpp"

using namespace cforge;
using cforge::testing::random_vector;

namespace {

Cav random_cav(Rng& rng, std::size_t h) {
  Cav c;
  c.w = random_vector(rng, h);
  const double n = norm2(c.w);
  for (double v : c.w) c.w_hat.push_back(v / n);
  c.b = rng.uniform(-1, 1);
  c.name = "cav";
  return c;
}

double max_diff(const Latent& a, const Latent& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Translate, IdentityNormAndAdditivity) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto z = random_vector(rng, 8);
    const auto cav = random_cav(rng, 8);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    EXPECT_EQ(translate(z, cav, 0.0).z, z);
    const auto t = translate(z, cav, a).z;
    Latent d(8);
    for (int k = 0; k < 8; ++k) d[k] = t[k] - z[k];
    EXPECT_NEAR(norm2(d), std::abs(a), 1e-12);
    EXPECT_LT(max_diff(translate(translate(z, cav, a).z, cav, b).z, translate(z, cav, a + b).z), 1e-12);
  }
}

TEST(Translate, FlagsButDoesNotClampOutOfBox) {
  Cav c;
  c.w = c.w_hat = {1.0, 0.0};
  const Latent z{0.9, 0.0};
  const auto t = translate(z, c, 0.5);
  EXPECT_TRUE(t.out_of_box);
  EXPECT_DOUBLE_EQ(t.z[0], 1.4);
  EXPECT_FALSE(translate(z, c, -0.5).out_of_box);
}

TEST(Blend, ReductionCommutativityCancellation) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto z = random_vector(rng, 8);
    const auto c1 = random_cav(rng, 8), c2 = random_cav(rng, 8), c3 = random_cav(rng, 8);
    const double e1 = rng.uniform(-1, 1), e2 = rng.uniform(-1, 1), e3 = rng.uniform(-1, 1);
    const BlendTerm single[] = {{&c1, e1}};
    EXPECT_EQ(blend(z, single).z, translate(z, c1, e1).z);
    const BlendTerm fwd[] = {{&c1, e1}, {&c2, e2}, {&c3, e3}};
    const BlendTerm rev[] = {{&c3, e3}, {&c1, e1}, {&c2, e2}};
    EXPECT_LT(max_diff(blend(z, fwd).z, blend(z, rev).z), 1e-12);
    const BlendTerm cancel[] = {{&c2, e2}, {&c2, -e2}};
    EXPECT_LT(max_diff(blend(z, cancel).z, z), 1e-12);
  }
}

TEST(Blend, InputsAreNotMutatedAndMismatchesRejected) {
  Rng rng(3);
  const auto z = random_vector(rng, 8);
  const auto copy = z;
  const auto cav = random_cav(rng, 8);
  const auto cav_copy = cav.w_hat;
  translate(z, cav, 0.3);
  EXPECT_EQ(z, copy);
  EXPECT_EQ(cav.w_hat, cav_copy);
  const auto wrong = random_cav(rng, 4);
  EXPECT_THROW(translate(z, wrong, 0.1), InvalidInput);
}

TEST(BlendGrid, DimensionsCentreCellAndExport) {
  Rng rng(4);
  AutoEncoderConfig arch;
  arch.points = 16;
  arch.latent_dim = 8;
  arch.hidden = {24, 12};
  const auto ae = AutoEncoder::initialize(arch, rng);
  const auto z = random_vector(rng, 8, -0.5, 0.5);
  const auto a = random_cav(rng, 8), b = random_cav(rng, 8);
  const auto ea = linspace(-0.5, 0.5, 5);
  const auto eb = linspace(-0.25, 0.25, 3);
  const auto grid = blend_grid(ae, z, a, b, ea, eb);
  EXPECT_EQ(grid.cells.size(), 15u);
  EXPECT_EQ(grid.at(2, 1).cloud, decode(ae, z));
  EXPECT_DOUBLE_EQ(grid.at(4, 0).eps_a, 0.5);
  EXPECT_DOUBLE_EQ(grid.at(4, 0).eps_b, -0.25);

  cforge::testing::TempDir dir("grid");
  export_grid(dir.path(), grid);
  EXPECT_TRUE(std::filesystem::exists(dir / "cell_4_2.xyz"));
  const auto index = nlohmann::json::parse(read_text_file(dir / "index.json"));
  EXPECT_EQ(index["cells"].size(), 15u);
  EXPECT_EQ(index["cells"][7]["file"], "cell_2_1.xyz");
  EXPECT_DOUBLE_EQ(index["cells"][7]["eps_a"].get<double>(), 0.0);
}

TEST(Linspace, EndpointsAndSpacing) {
  const auto v = linspace(-0.5, 0.5, 9);
  ASSERT_EQ(v.size(), 9u);
  EXPECT_EQ(v.front(), -0.5);
  EXPECT_EQ(v.back(), 0.5);
  EXPECT_EQ(v[4], 0.0);
  EXPECT_EQ(linspace(1, 2, 1), std::vector<double>{1});
  EXPECT_TRUE(linspace(1, 2, 0).empty());
}

TEST(Query, RankingTieBreakAndClamping) {
  Cav c;
  c.w = c.w_hat = {1.0, 0.0};
  c.b = 0.5;
  const std::vector<Latent> z{{0.1, 0}, {0.9, 0}, {0.5, 1}, {0.5, -1}, {-0.7, 0}};
  const std::vector<std::string> ids{"e", "d", "c", "b", "a"};
  const auto q = query(z, ids, c, 3);
  ASSERT_EQ(q.top.size(), 3u);
  EXPECT_EQ(q.top[0].id, "d");
  EXPECT_EQ(q.top[1].id, "b");  // tie with "c", broken by id
  EXPECT_EQ(q.top[2].id, "c");
  EXPECT_DOUBLE_EQ(q.top[0].score, 1.4);
  EXPECT_EQ(q.bottom[0].id, "a");
  EXPECT_FALSE(q.clamped);
  EXPECT_TRUE(query(z, ids, c, 0).top.empty());
  const auto all = query(z, ids, c, 50);
  EXPECT_TRUE(all.clamped);
  EXPECT_EQ(all.top.size(), 5u);
}

TEST(Query, NegationSwapsListsAndScalingIsInvariant) {
  Rng rng(5);
  std::vector<Latent> z;
  std::vector<std::string> ids;
  for (int i = 0; i < 40; ++i) {
    z.push_back(random_vector(rng, 8));
    ids.push_back("s" + std::to_string(100 + i));
  }
  const auto cav = random_cav(rng, 8);
  const auto q = query(z, ids, cav, 5);
  const auto n = query(z, ids, negated(cav), 5);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(q.top[i].id, n.bottom[i].id);
    EXPECT_EQ(q.bottom[i].id, n.top[i].id);
  }
  auto scaled = cav;
  for (double& v : scaled.w) v *= 3.0;
  scaled.b *= 3.0;
  const auto s = query(z, ids, scaled, 5);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(s.top[i].id, q.top[i].id);
}

TEST(LatentCorrelation, DefinitionsAndIndependence) {
  Rng rng(6);
  std::vector<Latent> z;
  for (int i = 0; i < 10000; ++i) {
    auto v = random_vector(rng, 8);
    z.push_back(v);
  }
  const auto indep = latent_correlation(z);
  EXPECT_LT(indep.mean_abs_offdiag, 0.05);
  for (int k = 0; k < 8; ++k) EXPECT_DOUBLE_EQ(indep.matrix(k, k), 1.0);

  for (auto& v : z) v[3] = v[1];
  EXPECT_NEAR(latent_correlation(z).matrix(1, 3), 1.0, 1e-12);

  for (auto& v : z) v[5] = 0.25;
  const auto with_const = latent_correlation(z);
  EXPECT_EQ(with_const.constant_coordinates, std::vector<std::size_t>{5});
  EXPECT_EQ(with_const.matrix(5, 2), 0.0);
  EXPECT_THROW(latent_correlation(std::vector<Latent>{Latent(8)}), InvalidInput);
}
