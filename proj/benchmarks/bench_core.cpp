#include <benchmark/benchmark.h>

#include "hashfield/model.hpp"
#include "hashfield/optim.hpp"

using namespace hashfield;

namespace {

struct BenchModel {
  HashGrid grid;
  PixelDecoder decoder;
};

BenchModel make_model(int k, std::uint64_t seed) {
  GridConfig cfg;
  cfg.k = k;
  Rng rng(seed);
  BenchModel m;
  m.grid = HashGrid::create(cfg, rng);
  for (auto& v : m.grid.tables) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  m.decoder = PixelDecoder::create(cfg.feature_dim(), rng);
  return m;
}

ImageBuffer bench_image() {
  ImageBuffer img = ImageBuffer::solid(128, 128, 0.2f, 0.4f, 0.6f);
  Rng rng(2);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

static void bench_spatial_hash(benchmark::State& state) {
  std::uint32_t acc = 0;
  int i = 0;
  for (auto _ : state) {
    acc ^= spatial_hash({i, i * 7 + 3}, 1u << 12);
    ++i;
  }
  benchmark::DoNotOptimize(acc);
}
BENCHMARK(bench_spatial_hash);

static void bench_interpolate_level(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  GridConfig cfg;
  cfg.k = k;
  Rng rng(3);
  HashGrid grid = HashGrid::create(cfg, rng);
  const LevelGeometry& level = grid.levels.back();
  LevelSample out;
  double x = 0.123;
  for (auto _ : state) {
    x = x < 0.9 ? x + 0.001 : 0.1;
    interpolate_level(grid.level_table(11), cfg.table_size, 2, x, 0.456, level, k, out);
    benchmark::DoNotOptimize(out.value[0]);
  }
}
BENCHMARK(bench_interpolate_level)->Arg(1)->Arg(2);

static void bench_decode(benchmark::State& state) {
  const BenchModel m = make_model(static_cast<int>(state.range(0)), 4);
  DecodedSample sample;
  double x = 0.2;
  for (auto _ : state) {
    x = x < 0.9 ? x + 0.001 : 0.1;
    decode(m.grid, m.decoder, x, 0.37, sample);
    benchmark::DoNotOptimize(sample.rgb[0]);
  }
}
BENCHMARK(bench_decode)->Arg(1)->Arg(2);

static void bench_decode_backward(benchmark::State& state) {
  const BenchModel m = make_model(static_cast<int>(state.range(0)), 5);
  DecodedSample sample;
  TableGradAccum tg;
  tg.resize(m.grid);
  DecoderGrads dg;
  dg.resize(m.decoder);
  CoordGrad cg;
  const std::array<double, 3> up{0.3, -0.2, 0.1};
  double x = 0.2;
  for (auto _ : state) {
    x = x < 0.9 ? x + 0.001 : 0.1;
    decode(m.grid, m.decoder, x, 0.61, sample);
    backward(m.grid, m.decoder, sample, up, tg, dg, cg);
    benchmark::DoNotOptimize(cg.x);
    tg.set_zero();
  }
}
BENCHMARK(bench_decode_backward)->Arg(1)->Arg(2);

static void bench_train_step(benchmark::State& state) {
  const ImageBuffer img = bench_image();
  GridConfig gcfg;
  gcfg.k = static_cast<int>(state.range(0));
  TrainConfig tcfg;
  tcfg.batch_pixels = 1024;
  tcfg.seed = 6;
  for (auto _ : state) {
    state.PauseTiming();
    tcfg.steps = static_cast<int>(state.range(1));
    state.ResumeTiming();
    const FitResult fit = fit_per_image(img, gcfg, tcfg);
    benchmark::DoNotOptimize(fit.report.loss_curve.back());
  }
  state.SetItemsProcessed(state.iterations() * state.range(1) * tcfg.batch_pixels);
}
BENCHMARK(bench_train_step)->Args({1, 10})->Args({2, 10})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
