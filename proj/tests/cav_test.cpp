#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "cforge/cav.hpp"
#include "cforge/error.hpp"
#include "cforge/shapes.hpp"
#include "support.hpp"

using namespace cforge;

namespace {

std::vector<Latent> cluster(Rng& rng, const std::vector<double>& mu, double sigma, std::size_t n) {
  std::vector<Latent> out;
  for (std::size_t i = 0; i < n; ++i) {
    Latent z(mu.size());
    for (std::size_t k = 0; k < mu.size(); ++k) z[k] = mu[k] + sigma * rng.normal();
    out.push_back(z);
  }
  return out;
}

Cav unit_cav(std::vector<double> w_hat) {
  Cav c;
  c.name = "c";
  c.w = w_hat;
  c.w_hat = std::move(w_hat);
  return c;
}

}  // namespace

TEST(TrainCav, SeparatesGaussianClustersAlongTheCentroidDifference) {
  Rng rng(1);
  std::vector<double> mu_p(8, 0.0), mu_n(8, 0.0);
  const auto dir = cforge::testing::random_vector(rng, 8);
  const double len = norm2(dir);
  for (int k = 0; k < 8; ++k) {
    mu_p[k] = 0.5 * dir[k] / len;
    mu_n[k] = -0.5 * dir[k] / len;
  }
  const auto pos = cluster(rng, mu_p, 0.05, 60);
  const auto neg = cluster(rng, mu_n, 0.05, 40);
  const auto cav = train_cav(pos, neg, CavConfig{}, "p", "n");
  EXPECT_EQ(cav.train_accuracy, 1.0);
  double cos = 0;
  for (int k = 0; k < 8; ++k) cos += cav.w_hat[k] * dir[k] / len;
  EXPECT_GT(cos, 0.95);
  EXPECT_NEAR(norm2(cav.w_hat), 1.0, 1e-12);
  EXPECT_EQ(cav.name, "p-n");
}

TEST(TrainCav, SwappingTheSetsNegatesTheDirection) {
  Rng rng(2);
  const auto pos = cluster(rng, std::vector<double>(8, 0.1), 0.3, 25);
  const auto neg = cluster(rng, std::vector<double>(8, -0.1), 0.3, 31);
  CavConfig cfg;
  cfg.seed = 9;
  const auto a = train_cav(pos, neg, cfg);
  const auto b = train_cav(neg, pos, cfg);
  for (int k = 0; k < 8; ++k) EXPECT_NEAR(a.w_hat[k], -b.w_hat[k], 1e-12);
  EXPECT_NEAR(a.b, -b.b, 1e-12);
}

TEST(TrainCav, OrientationConventionHolds) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pos = cluster(rng, cforge::testing::random_vector(rng, 8, -0.3, 0.3), 0.4, 20);
    const auto neg = cluster(rng, cforge::testing::random_vector(rng, 8, -0.3, 0.3), 0.4, 20);
    const auto cav = train_cav(pos, neg, CavConfig{});
    double sp = 0, sn = 0;
    for (const auto& z : pos) sp += dot(cav.w, z) / pos.size();
    for (const auto& z : neg) sn += dot(cav.w, z) / neg.size();
    EXPECT_GT(sp, sn);
  }
}

TEST(TrainCav, DegenerateInputs) {
  Rng rng(4);
  const auto pos = cluster(rng, std::vector<double>(8, 0.0), 0.3, 10);
  EXPECT_THROW(train_cav(pos, pos, CavConfig{}), DegenerateError);
  auto shuffled = pos;
  std::swap(shuffled[0], shuffled[5]);
  EXPECT_THROW(train_cav(pos, shuffled, CavConfig{}), DegenerateError);
  EXPECT_THROW(train_cav({}, pos, CavConfig{}), InvalidInput);
  // All-zero latents leave w at zero.
  const std::vector<Latent> zeros(5, Latent(8, 0.0));
  const std::vector<Latent> also_zero(3, Latent(8, 0.0));
  EXPECT_THROW(train_cav(zeros, also_zero, CavConfig{}), DegenerateError);
}

TEST(Sensitivity, UnitDirectionDotProduct) {
  const auto cav = unit_cav({0.6, 0.8, 0.0});
  EXPECT_DOUBLE_EQ(sensitivity(cav, cav.w_hat), 1.0);
  EXPECT_DOUBLE_EQ(sensitivity(cav, std::vector<double>{0.8, -0.6, 0.0}), 0.0);
  EXPECT_DOUBLE_EQ(sensitivity(cav, std::vector<double>{-1.2, -1.6, 0.0}), -2.0);
  const std::vector<double> a{0.1, 0.2, 0.3}, b{-0.4, 0.5, 0.9};
  std::vector<double> ab{a[0] + b[0], a[1] + b[1], a[2] + b[2]};
  EXPECT_NEAR(sensitivity(cav, ab), sensitivity(cav, a) + sensitivity(cav, b), 1e-15);
  EXPECT_THROW(sensitivity(cav, std::vector<double>{1, 2}), InvalidInput);
}

TEST(Sensitivity, DragAndFieldThroughSmallModels) {
  Rng rng(11);
  AutoEncoderConfig arch;
  arch.points = 16;
  arch.hidden = {24, 12};
  const auto ae = AutoEncoder::initialize(arch, rng);
  const LayerSpec specs[] = {{16, Activation::leaky_relu(), 0.1}, {1, Activation::relu(), 0.0}};
  auto net = MlpModel::initialize(8, specs, rng);
  net.mutable_layers().back().bias[0] = 2.0;
  const Regressor reg(net);

  const auto layout = SurfaceLayout::make(16, 1);
  const auto pc = normalize(gen_cuboid(rng, SizeBounds{}, layout));
  const auto cav = unit_cav([&] {
    auto w = cforge::testing::random_vector(rng, 8);
    const double n = norm2(w);
    for (double& v : w) v /= n;
    return w;
  }());
  const auto z = encode(ae, pc);
  EXPECT_EQ(sensitivity_of_drag(cav, reg, ae, pc), sensitivity(cav, grad_wrt_latent(reg, z)));
  EXPECT_EQ(sensitivity_of_drag_latent(cav, reg, z), sensitivity(cav, grad_wrt_latent(reg, z)));

  // Field: shape, finite differences and linearity in the direction.
  const Matrix f = sensitivity_field(cav, ae, pc);
  EXPECT_EQ(f.rows(), 16u);
  EXPECT_EQ(f.cols(), 3u);
  const double eps = 1e-4;
  Latent zp = z, zm = z;
  for (int k = 0; k < 8; ++k) {
    zp[k] += eps * cav.w_hat[k];
    zm[k] -= eps * cav.w_hat[k];
  }
  const auto up = decode(ae, zp), down = decode(ae, zm);
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_LT(std::abs(f.values()[i] - (up.coords()[i] - down.coords()[i]) / (2 * eps)), 1e-4);
  }
  auto other = cav;
  std::rotate(other.w_hat.begin(), other.w_hat.begin() + 3, other.w_hat.end());
  auto sum = cav;
  for (int k = 0; k < 8; ++k) sum.w_hat[k] += other.w_hat[k];
  const Matrix fo = sensitivity_field_latent(other, ae, z), fs = sensitivity_field_latent(sum, ae, z);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(fs.values()[i], f.values()[i] + fo.values()[i], 1e-12);

  // A dead output unit gives zero sensitivity.
  auto dead = net;
  dead.mutable_layers().back().bias[0] = -100.0;
  EXPECT_EQ(sensitivity_of_drag_latent(cav, Regressor(dead), z), 0.0);
}

TEST(TcavScore, ArithmeticAndComplement) {
  const std::vector<double> s{0.2, -0.1, 0.4};
  const auto t = tcav_score(s);
  EXPECT_DOUBLE_EQ(t.sign_fraction, 2.0 / 3.0);
  EXPECT_NEAR(t.mean_magnitude, 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(t.mean_abs_magnitude, 0.7 / 3.0, 1e-15);
  const std::vector<double> all_pos{1, 2, 3};
  EXPECT_EQ(tcav_score(all_pos).sign_fraction, 1.0);
  // Zero counts as not positive.
  const std::vector<double> with_zero{0.0, 1.0};
  EXPECT_EQ(tcav_score(with_zero).sign_fraction, 0.5);
  EXPECT_THROW(tcav_score(std::vector<double>{}), InvalidInput);

  Rng rng(5);
  const auto cav = unit_cav({0.0, 1.0, 0.0});
  std::vector<std::vector<double>> grads;
  for (int i = 0; i < 50; ++i) grads.push_back(cforge::testing::random_vector(rng, 3));
  EXPECT_DOUBLE_EQ(tcav_score(cav, grads).sign_fraction + tcav_score(negated(cav), grads).sign_fraction, 1.0);
}

TEST(SignificanceTest, ContractAndPreconditions) {
  Rng rng(6);
  const auto pos = cluster(rng, std::vector<double>(8, 0.3), 0.2, 30);
  const auto pool = cluster(rng, std::vector<double>(8, 0.0), 0.3, 150);
  std::vector<std::vector<double>> grads;
  // Target grows with the first coordinate sum: the concept direction
  // increases it.
  for (int i = 0; i < 40; ++i) grads.push_back(std::vector<double>(8, 1.0 + 0.5 * rng.normal()));
  SignificanceConfig sc;
  sc.n_runs = 10;
  sc.sample_size = 20;
  sc.cav.epochs = 50;
  const auto row = significance_test("c", "random", pos, {}, pool, grads, sc);
  EXPECT_EQ(row.n_runs, 10u);
  EXPECT_EQ(row.concept_name, "c");
  EXPECT_GT(row.sign_fraction, 0.9);
  EXPECT_LT(row.p_value, 0.05);
  EXPECT_GE(row.std_error, 0.0);

  sc.n_runs = 9;
  EXPECT_THROW(significance_test("c", "random", pos, {}, pool, grads, sc), InvalidInput);
  sc.n_runs = 10;
  sc.sample_size = 100;
  EXPECT_THROW(significance_test("c", "random", pos, {}, pool, grads, sc), InvalidInput);
}

TEST(SignificanceTest, PoolAsConceptIsNull) {
  // Each run's concept is a fresh random subset and its counter comes from
  // the rest, so concept and random runs are exchangeable.
  Rng rng(12);
  const auto pool = cluster(rng, std::vector<double>(8, 0.0), 0.3, 120);
  std::vector<std::vector<double>> grads;
  for (int i = 0; i < 40; ++i) {
    std::vector<double> g(8);
    for (double& v : g) v = rng.normal();
    grads.push_back(g);
  }
  SignificanceConfig sc;
  sc.n_runs = 10;
  sc.sample_size = 30;
  sc.cav.epochs = 50;
  std::size_t below = 0;
  double min_p = 1.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    sc.seed = seed;
    const auto row = significance_test("null", "random", pool, {}, pool, grads, sc);
    below += row.p_value < 0.05 ? 1 : 0;
    min_p = std::min(min_p, row.p_value);
  }
  EXPECT_LE(below, 4u);
  EXPECT_GT(min_p, 0.001);
}

TEST(TcavReport, CsvRoundTrip) {
  TcavReport r;
  r.rows.push_back({"cuboid", "ellipsoid", 0.75, 0.01, 0.02, 1e-5, 20, 0.03, 0.5, 0.04});
  r.rows.push_back({"sport", "random", 0.4, -0.002, 0.05, 0.3, 20, 0.01, 0.52, 0.03});
  const auto csv = r.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "concept,counter,sign_fraction,mean_magnitude,std_error,p_value,n_runs,mean_abs_magnitude,"
            "random_sign_fraction,random_std_error");
  EXPECT_EQ(TcavReport::from_csv(csv).to_csv(), csv);
}

TEST(ConceptSpec, ParsingAndResolution) {
  DatasetManifest m;
  m.points = 16;
  m.entries.push_back({"car_0000", "a", {"car", "sport"}, 1.0, Split::kTrain});
  m.entries.push_back({"car_0001", "b", {"car", "sedan"}, 1.0, Split::kVal});
  m.entries.push_back({"cuboid_0000", "c", {"cuboid"}, 1.0, Split::kTrain});

  const auto by_label = ConceptSpec::from_json(R"({"name": "cars", "label": "car", "split": "train"})");
  const auto set = resolve_concept(by_label, m);
  EXPECT_EQ(set.ids, std::vector<std::string>{"car_0000"});

  const auto by_ids = ConceptSpec::from_json(R"({"name": "x", "ids": ["cuboid_0000"], "counter": "random:50"})");
  EXPECT_EQ(resolve_concept(by_ids, m).indices, std::vector<std::size_t>{2});
  EXPECT_EQ(parse_random_counter(by_ids.counter), std::optional<std::size_t>(50));
  EXPECT_EQ(parse_random_counter("other.json"), std::nullopt);
  EXPECT_EQ(ConceptSpec::from_json(by_ids.to_json()).to_json(), by_ids.to_json());

  const auto gen = ConceptSpec::from_json(R"({"name": "boxes", "generator": {"kind": "cuboid", "count": 3, "seed": 2}})");
  const auto gset = resolve_concept(gen, m);
  EXPECT_EQ(gset.source, ConceptSet::Source::kSynthetic);
  ASSERT_EQ(gset.clouds.size(), 3u);
  EXPECT_EQ(gset.clouds[0].size(), 16u);

  EXPECT_THROW(resolve_concept(ConceptSpec::from_json(R"({"name": "y", "ids": ["nope"]})"), m), InvalidInput);
  EXPECT_THROW(resolve_concept(ConceptSpec::from_json(R"({"name": "y", "label": "bump"})"), m), InvalidInput);
  EXPECT_THROW(ConceptSpec::from_json(R"({"name": "y"})"), InvalidInput);
  EXPECT_THROW(ConceptSpec::from_json("not json"), InvalidInput);
}

TEST(CavFile, RoundTripAndHashCheck) {
  cforge::testing::TempDir dir("cav");
  Rng rng(7);
  const auto pos = cluster(rng, std::vector<double>(8, 0.2), 0.2, 10);
  const auto neg = cluster(rng, std::vector<double>(8, -0.2), 0.2, 10);
  auto cav = train_cav(pos, neg, CavConfig{}, "a", "b");
  cav.ae_hash = "feed";
  save_cav(dir / "a.json", cav);
  const auto back = load_cav(dir / "a.json", "feed");
  EXPECT_EQ(back.w, cav.w);
  EXPECT_EQ(back.w_hat, cav.w_hat);
  EXPECT_EQ(back.b, cav.b);
  EXPECT_EQ(back.counter_name, "b");
  EXPECT_THROW(load_cav(dir / "a.json", "beef"), HashMismatch);
}
