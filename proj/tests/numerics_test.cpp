#include <gtest/gtest.h>

#include <cmath>

#include "cforge/checkpoint.hpp"
#include "cforge/error.hpp"
#include "cforge/io.hpp"
#include "cforge/numerics.hpp"
#include "support.hpp"

using namespace cforge;
using cforge::testing::random_mlp;
using cforge::testing::random_vector;

namespace {

// Plain triple loop, the oracle for the BLAS-backed gemm.
Matrix naive_product(const Matrix& a, bool ta, const Matrix& b, bool tb) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t n = tb ? b.rows() : b.cols();
  Matrix c(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += (ta ? a(p, i) : a(i, p)) * (tb ? b(j, p) : b(p, j));
      c(i, j) = s;
    }
  return c;
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-1, 1);
  return m;
}

// L = sum_ij c_ij * y_ij for a fixed random weighting c.
double weighted_output(const MlpModel& m, const Matrix& x, const Matrix& c) {
  const Matrix y = infer(m, x);
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * c.values()[i];
  return s;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-2}); }

}  // namespace

TEST(Gemm, MatchesNaiveProductForAllTransposes) {
  Rng rng(3);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      const Matrix a = ta ? random_matrix(rng, 7, 5) : random_matrix(rng, 5, 7);
      const Matrix b = tb ? random_matrix(rng, 4, 7) : random_matrix(rng, 7, 4);
      Matrix c(5, 4, 1.0);
      gemm(ta, tb, 2.0, a, b, 0.5, c);
      const Matrix ref = naive_product(a, ta, b, tb);
      for (std::size_t i = 0; i < c.size(); ++i) {
        EXPECT_NEAR(c.values()[i], 2.0 * ref.values()[i] + 0.5, 1e-13);
      }
    }
}

TEST(Gemm, RejectsShapeMismatch) {
  Matrix a(2, 3), b(4, 2), c(2, 2);
  EXPECT_THROW(gemm(false, false, 1.0, a, b, 0.0, c), InvalidInput);
}

TEST(Activations, KinkConventions) {
  EXPECT_DOUBLE_EQ(leaky_relu(-2.0, 0.01), -0.02);
  EXPECT_DOUBLE_EQ(leaky_relu_derivative(0.0, 0.01), 0.01);
  EXPECT_DOUBLE_EQ(relu_derivative(0.0), 0.0);
  EXPECT_DOUBLE_EQ(relu(-1.0), 0.0);
  EXPECT_NEAR(tanh_derivative(0.3), 1 - std::tanh(0.3) * std::tanh(0.3), 1e-15);
  for (auto k : {ActivationKind::kIdentity, ActivationKind::kTanh, ActivationKind::kRelu, ActivationKind::kLeakyRelu}) {
    EXPECT_EQ(parse_activation(activation_name(k)), k);
  }
  EXPECT_THROW(parse_activation("sigmoid"), InvalidInput);
}

TEST(MlpModel, RejectsBrokenChains) {
  DenseLayer a{Matrix(4, 3), std::vector<double>(4), Activation::tanh(), 0.0};
  DenseLayer b{Matrix(2, 5), std::vector<double>(2), Activation::identity(), 0.0};
  EXPECT_THROW(MlpModel({a, b}), InvalidInput);
  DenseLayer bad_bias{Matrix(4, 3), std::vector<double>(3), Activation::tanh(), 0.0};
  EXPECT_THROW(MlpModel({bad_bias}), InvalidInput);
}

TEST(MlpModel, GlorotUniformInitialisation) {
  Rng rng(1);
  const LayerSpec specs[] = {{40, Activation::tanh(), 0.0}, {10, Activation::identity(), 0.0}};
  const auto m = MlpModel::initialize(60, specs, rng);
  const double limit = std::sqrt(6.0 / 100.0);
  double max_abs = 0;
  for (double w : m.layers()[0].weights.values()) max_abs = std::max(max_abs, std::abs(w));
  EXPECT_LE(max_abs, limit);
  EXPECT_GT(max_abs, 0.9 * limit);
  for (double b : m.layers()[1].bias) EXPECT_EQ(b, 0.0);
  EXPECT_EQ(m.parameter_count(), 60u * 40 + 40 + 40 * 10 + 10);
}

TEST(Backward, MatchesCentralDifferencesOnRandomNetworks) {
  Rng rng(11);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t in = 1 + rng.index(8);
    std::vector<LayerSpec> specs;
    const std::size_t depth = 1 + rng.index(3);
    for (std::size_t d = 0; d < depth; ++d) specs.push_back({1 + rng.index(8), Activation::tanh(), 0.0});
    specs.push_back({1 + rng.index(4), Activation::identity(), 0.0});
    MlpModel m = random_mlp(rng, in, specs);
    const Matrix x = random_matrix(rng, 3, in);
    const Matrix c = random_matrix(rng, 3, m.output_dim());

    const auto fwd = forward(m, x, Mode::kInfer, nullptr);
    const auto back = backward(m, fwd.cache, c);
    for (std::size_t k = 0; k < m.layers().size(); ++k) {
      auto& w = m.mutable_layers()[k].weights;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double keep = w.values()[i];
        w.values()[i] = keep + h;
        const double up = weighted_output(m, x, c);
        w.values()[i] = keep - h;
        const double down = weighted_output(m, x, c);
        w.values()[i] = keep;
        EXPECT_LT(rel_err(back.params.layers[k].weights.values()[i], (up - down) / (2 * h)), 1e-6);
      }
      auto& b = m.mutable_layers()[k].bias;
      for (std::size_t i = 0; i < b.size(); ++i) {
        const double keep = b[i];
        b[i] = keep + h;
        const double up = weighted_output(m, x, c);
        b[i] = keep - h;
        const double down = weighted_output(m, x, c);
        b[i] = keep;
        EXPECT_LT(rel_err(back.params.layers[k].bias[i], (up - down) / (2 * h)), 1e-6);
      }
    }
    Matrix xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      xp.values()[i] = x.values()[i] + h;
      const double up = weighted_output(m, xp, c);
      xp.values()[i] = x.values()[i] - h;
      const double down = weighted_output(m, xp, c);
      xp.values()[i] = x.values()[i];
      EXPECT_LT(rel_err(back.grad_input.values()[i], (up - down) / (2 * h)), 1e-6);
    }
  }
}

TEST(Backward, ReluKinkUsesZeroDerivative) {
  DenseLayer l{Matrix(1, 1, 1.0), {0.0}, Activation::relu(), 0.0};
  MlpModel m({l});
  const double x = 0.0;
  const auto fwd = forward(m, std::span<const double>(&x, 1), Mode::kInfer, nullptr);
  const double one = 1.0;
  EXPECT_EQ(backward(m, fwd.cache, std::span<const double>(&one, 1)).grad_input(0, 0), 0.0);
}

TEST(Dropout, InferenceIsDeterministicAndTrainingMaskReplays) {
  Rng rng(5);
  const LayerSpec specs[] = {{200, Activation::leaky_relu(), 0.1}, {3, Activation::identity(), 0.0}};
  const auto m = MlpModel::initialize(10, specs, rng);
  const auto x = random_vector(rng, 10);
  EXPECT_EQ(infer(m, x), infer(m, x));

  Rng drop(9);
  const auto fwd = forward(m, x, Mode::kTrain, &drop);
  const Matrix& mask = fwd.cache.layers[0].mask;
  ASSERT_EQ(mask.size(), 200u);
  std::size_t zeros = 0;
  for (double v : mask.values()) {
    if (v == 0.0) ++zeros;
    else EXPECT_DOUBLE_EQ(v, 1.0 / 0.9);
  }
  EXPECT_GT(zeros, 5u);
  EXPECT_LT(zeros, 45u);
  EXPECT_TRUE(fwd.cache.layers[1].mask.empty());
  EXPECT_EQ(replay(m, fwd.cache), fwd.output);
  EXPECT_THROW(forward(m, x, Mode::kTrain, nullptr), InvalidInput);
}

TEST(JacobianVectorProduct, MatchesFiniteDifferences) {
  Rng rng(21);
  const LayerSpec specs[] = {{12, Activation::tanh(), 0.0}, {9, Activation::leaky_relu(), 0.0},
                             {6, Activation::identity(), 0.0}};
  const auto m = random_mlp(rng, 5, {specs, specs + 3});
  const auto x = random_vector(rng, 5);
  const auto v = random_vector(rng, 5);
  const auto jv = jacobian_vector_product(m, x, v);
  const double h = 1e-6;
  std::vector<double> xp(5), xm(5);
  for (int i = 0; i < 5; ++i) {
    xp[i] = x[i] + h * v[i];
    xm[i] = x[i] - h * v[i];
  }
  const auto yp = infer(m, xp), ym = infer(m, xm);
  for (std::size_t i = 0; i < jv.size(); ++i) EXPECT_NEAR(jv[i], (yp[i] - ym[i]) / (2 * h), 1e-7);
}

TEST(Adam, FirstStepMovesEachParameterByLearningRate) {
  // With bias correction the first update is lr * g / (|g| + eps') ~ lr * sign(g).
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -4.0, 0.0};
  std::vector<std::span<double>> ps{p};
  std::vector<std::span<const double>> gs{g};
  const std::size_t sizes[] = {3};
  auto st = make_adam_state(sizes, AdamConfig{});
  adam_step(ps, gs, st);
  EXPECT_NEAR(p[0], 1.0 - 1e-3 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 1e-3 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_EQ(p[2], 0.5);
}

TEST(Adam, SecondStepAgainstHandComputedMoments) {
  std::vector<double> p{0.0};
  std::vector<std::span<double>> ps{p};
  const std::size_t sizes[] = {1};
  auto st = make_adam_state(sizes, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  std::vector<double> g{1.0};
  std::vector<std::span<const double>> gs{g};
  adam_step(ps, gs, st);
  g[0] = -2.0;
  adam_step(ps, gs, st);
  const double m = 0.9 * 0.1 + 0.1 * -2.0;
  const double v = 0.999 * 0.001 + 0.001 * 4.0;
  const double expected = -0.1 * 1.0 / (1.0 + 1e-8) - 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(p[0], expected, 1e-14);
}

TEST(Adam, NonFiniteGradientIsATrainingError) {
  std::vector<double> p{0.0};
  std::vector<double> g{std::nan("")};
  std::vector<std::span<double>> ps{p};
  std::vector<std::span<const double>> gs{g};
  const std::size_t sizes[] = {1};
  auto st = make_adam_state(sizes, AdamConfig{});
  EXPECT_THROW(adam_step(ps, gs, st), TrainingError);
}

TEST(Adam, MinimisesAQuadratic) {
  Rng rng(2);
  const LayerSpec specs[] = {{8, Activation::tanh(), 0.0}, {1, Activation::identity(), 0.0}};
  auto m = MlpModel::initialize(2, specs, rng);
  auto st = make_adam_state(m, AdamConfig{0.01});
  Matrix x(16, 2);
  for (double& v : x.values()) v = rng.uniform(-1, 1);
  auto loss = [&] {
    const Matrix y = infer(m, x);
    double s = 0;
    for (std::size_t r = 0; r < 16; ++r) s += std::pow(y(r, 0) - x(r, 0) * x(r, 1), 2);
    return s / 16;
  };
  const double before = loss();
  for (int it = 0; it < 2000; ++it) {
    const auto fwd = forward(m, x, Mode::kTrain, &rng);
    Matrix g(16, 1);
    for (std::size_t r = 0; r < 16; ++r) g(r, 0) = 2 * (fwd.output(r, 0) - x(r, 0) * x(r, 1)) / 16;
    adam_step(m, backward(m, fwd.cache, g).params, st);
  }
  EXPECT_LT(loss(), 0.05 * before);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(8);
  const LayerSpec specs[] = {{7, Activation::leaky_relu(0.02), 0.1}, {3, Activation::tanh(), 0.0}};
  const auto a = random_mlp(rng, 4, {specs, specs + 2});
  const LayerSpec rs[] = {{2, Activation::relu(), 0.0}};
  const auto b = random_mlp(rng, 3, {rs, rs + 1});
  const std::string text = serialize_models({{"first", a}, {"second", b}});
  const auto back = parse_models(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(find_model(back, "first"), a);
  EXPECT_EQ(find_model(back, "second"), b);
  EXPECT_EQ(serialize_models(back), text);
  EXPECT_THROW(find_model(back, "third"), IoError);
}

TEST(Checkpoint, MalformedInputIsAnIoError) {
  EXPECT_THROW(parse_models("format something-else/1\n"), IoError);
  EXPECT_THROW(parse_models("format concept-forge-model/1\nmodels 1\nmodel x\ninput_dim 2"), IoError);
}

TEST(Io, ShortestRoundTripFormatting) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.125}) EXPECT_EQ(parse_double(format_double(v)), v);
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_EQ(parse_int("-42"), -42);
  EXPECT_THROW(parse_int("4 2"), IoError);
  EXPECT_THROW(parse_double("1.5x"), IoError);
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}
