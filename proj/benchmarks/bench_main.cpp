#include <benchmark/benchmark.h>

#include "cforge/autoencoder.hpp"
#include "cforge/cav.hpp"
#include "cforge/shapes.hpp"

using namespace cforge;

namespace {

Matrix random_batch(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-0.5, 0.5);
  return m;
}

AutoEncoder paper_sized_ae(std::size_t points) {
  Rng rng(1);
  AutoEncoderConfig cfg;
  cfg.points = points;
  return AutoEncoder::initialize(cfg, rng);
}

}  // namespace

static void BM_EncoderForward(benchmark::State& state) {
  const auto ae = paper_sized_ae(512);
  Rng rng(2);
  const Matrix x = random_batch(rng, static_cast<std::size_t>(state.range(0)), 1536);
  for (auto _ : state) benchmark::DoNotOptimize(forward(ae.encoder(), x, Mode::kInfer, nullptr).output);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderForward)->Arg(1)->Arg(32);

// One minibatch step of the auto-encoder: forward through both halves and
// back again.
static void BM_AutoencoderStep(benchmark::State& state) {
  const auto ae = paper_sized_ae(512);
  Rng rng(3);
  const Matrix x = random_batch(rng, 32, 1536);
  for (auto _ : state) {
    auto enc = forward(ae.encoder(), x, Mode::kTrain, &rng);
    auto dec = forward(ae.decoder(), enc.output, Mode::kTrain, &rng);
    Matrix g = dec.output;
    auto bd = backward(ae.decoder(), dec.cache, g);
    auto be = backward(ae.encoder(), enc.cache, bd.grad_input);
    benchmark::DoNotOptimize(be.params);
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_AutoencoderStep)->Unit(benchmark::kMillisecond);

static void BM_SensitivityField(benchmark::State& state) {
  const auto ae = paper_sized_ae(512);
  Rng rng(4);
  Cav cav;
  for (int k = 0; k < 8; ++k) cav.w.push_back(rng.uniform(-1, 1));
  const double n = norm2(cav.w);
  for (double v : cav.w) cav.w_hat.push_back(v / n);
  std::vector<double> z(8, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(sensitivity_field_latent(cav, ae, z));
}
BENCHMARK(BM_SensitivityField);

static void BM_GenerateCar(benchmark::State& state) {
  const auto layout = SurfaceLayout::make(static_cast<std::size_t>(state.range(0)), 1);
  Rng rng(5);
  for (auto _ : state) benchmark::DoNotOptimize(normalize(gen_car_like(rng, CarStyle::kSport, layout).cloud));
}
BENCHMARK(BM_GenerateCar)->Arg(512)->Arg(2048);

static void BM_DragProxy(benchmark::State& state) {
  const auto layout = SurfaceLayout::make(512, 1);
  Rng rng(6);
  const auto pc = normalize(gen_car_like(rng, CarStyle::kSedan, layout).cloud);
  for (auto _ : state) benchmark::DoNotOptimize(drag_proxy(pc));
}
BENCHMARK(BM_DragProxy);

BENCHMARK_MAIN();
