// Parallel kernels against their serial references.
//   ./bench_kernels --benchmark_counters_tabular=true
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>
#include <vector>

#include "stainalign/geometry.hpp"
#include "stainalign/kernels.hpp"

using namespace stainalign;

namespace {

FloatRaster noise_image(int n) {
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> u(0.0F, 255.0F);
  FloatRaster img(n, n);
  for (float& v : img.data()) v = u(rng);
  return img;
}

Raster noise_rgb(int n) {
  std::mt19937 rng(2);
  Raster img(n, n, 3);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng() & 0xFF);
  return img;
}

std::vector<float> descriptors(int count, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(0.0F, 0.3F);
  std::vector<float> d(static_cast<std::size_t>(count) * 128);
  for (float& v : d) v = u(rng);
  return d;
}

// A rotation by 3 degrees about the centre, as a remap.
struct Rotate {
  double c, s, oc;
  Point2 operator()(double x, double y) const {
    const double dx = x - oc, dy = y - oc;
    return {oc + c * dx - s * dy, oc + s * dx + c * dy};
  }
};
Rotate rotate_for(int n) { return {std::cos(0.05), std::sin(0.05), (n - 1) / 2.0}; }

void BM_blur_parallel(benchmark::State& st) {
  const FloatRaster img = noise_image(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(kernels::gaussian_blur(img, 3.2));
}
void BM_blur_serial(benchmark::State& st) {
  const FloatRaster img = noise_image(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(kernels::serial::gaussian_blur(img, 3.2));
}

void BM_remap_parallel(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  const Raster img = noise_rgb(n);
  const Rotate r = rotate_for(n);
  for (auto _ : st) {
    benchmark::DoNotOptimize(kernels::remap_bilinear(
        img, {n, n}, [&](double x, double y, bool&) { return r(x, y); }, std::uint8_t{255}));
  }
}
void BM_remap_serial(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  const Raster img = noise_rgb(n);
  const Rotate r = rotate_for(n);
  for (auto _ : st) {
    benchmark::DoNotOptimize(kernels::serial::remap_bilinear(
        img, {n, n}, [&](double x, double y, bool&) { return r(x, y); }, std::uint8_t{255}));
  }
}

void BM_nearest_parallel(benchmark::State& st) {
  const auto q = descriptors(static_cast<int>(st.range(0)), 3);
  const auto r = descriptors(static_cast<int>(st.range(0)), 4);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::nearest_two(q, r, 128));
}
void BM_nearest_serial(benchmark::State& st) {
  const auto q = descriptors(static_cast<int>(st.range(0)), 3);
  const auto r = descriptors(static_cast<int>(st.range(0)), 4);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::serial::nearest_two(q, r, 128));
}

LwmModel grid_model(int controls_per_side) {
  std::vector<Correspondence> pairs;
  const double step = 1000.0 / (controls_per_side - 1);
  for (int j = 0; j < controls_per_side; ++j) {
    for (int i = 0; i < controls_per_side; ++i) {
      const Point2 p{i * step, j * step};
      pairs.push_back({p, {p.x + 3 * std::sin(p.y / 150), p.y + 3 * std::sin(p.x / 170)}, 0});
    }
  }
  return fit_lwm(pairs, 12);
}

void BM_lwm_indexed(benchmark::State& st) {
  const LwmModel m = grid_model(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    Point2 acc;
    for (int k = 0; k < 1000; ++k) {
      const Point2 q = m.apply({k * 0.997, 1000 - k * 0.991});
      acc.x += q.x;
    }
    benchmark::DoNotOptimize(acc);
  }
}
void BM_lwm_brute_force(benchmark::State& st) {
  const LwmModel m = grid_model(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    Point2 acc;
    for (int k = 0; k < 1000; ++k) {
      const Point2 q = serial::lwm_apply(m, {k * 0.997, 1000 - k * 0.991});
      acc.x += q.x;
    }
    benchmark::DoNotOptimize(acc);
  }
}

}  // namespace

BENCHMARK(BM_blur_parallel)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_blur_serial)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_remap_parallel)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_remap_serial)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_nearest_parallel)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_nearest_serial)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_lwm_indexed)->Arg(10)->Arg(30)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_lwm_brute_force)->Arg(10)->Arg(30)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
