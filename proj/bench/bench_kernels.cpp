/// Serial vs OpenMP comparison for the hot kernels: splat rendering forward
/// and backward, and density grid sampling. Run with --benchmark_filter to
/// narrow, e.g. --benchmark_filter=forward.

#include "gsopt/mesh.hpp"
#include "gsopt/renderer.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace gsopt;

namespace {

GaussianCloud make_cloud(std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> pos(-0.6, 0.6);
    std::uniform_real_distribution<double> rot(-1.0, 1.0);
    std::uniform_real_distribution<double> ls(std::log(0.02), std::log(0.12));
    std::uniform_real_distribution<double> op(-1.0, 2.0);
    std::uniform_real_distribution<double> col(0.0, 1.0);
    GaussianCloud cloud;
    for (std::size_t i = 0; i < count; ++i) {
        Gaussian3D g;
        g.center = Vec3(pos(rng), pos(rng), pos(rng));
        g.rotation = Vec4(rot(rng), rot(rng), rot(rng), rot(rng)).normalized();
        g.log_scale = Vec3(ls(rng), ls(rng), ls(rng));
        g.opacity_logit = op(rng);
        g.color = Vec3(col(rng), col(rng), col(rng));
        cloud.push_back(g);
    }
    cloud.zero_grad();
    return cloud;
}

CameraView bench_view(int size) {
    return make_look_at(Vec3(0, 0.4, 1.6), Vec3::Zero(), Vec3::UnitY(), 50.0, size, size);
}

RenderSettings settings_for(bool parallel) {
    RenderSettings s;
    s.parallel = parallel;
    return s;
}

void bench_forward(benchmark::State& state, bool parallel) {
    const GaussianCloud cloud = make_cloud(static_cast<std::size_t>(state.range(0)), 7);
    const CameraView view = bench_view(static_cast<int>(state.range(1)));
    const Vec3 background = Vec3::Constant(1.0);
    const RenderSettings settings = settings_for(parallel);
    for (auto _ : state) {
        RenderOutput out = render_cloud(cloud, view, background, settings);
        benchmark::DoNotOptimize(out.color.data());
    }
}

void bench_backward(benchmark::State& state, bool parallel) {
    GaussianCloud cloud = make_cloud(static_cast<std::size_t>(state.range(0)), 7);
    const CameraView view = bench_view(static_cast<int>(state.range(1)));
    const Vec3 background = Vec3::Constant(1.0);
    const RenderSettings settings = settings_for(parallel);
    const RenderOutput out = render_cloud(cloud, view, background, settings);
    Image d_color(out.color.height(), out.color.width(), 3, 1.0);
    RenderAdjoints adjoints;
    adjoints.color = &d_color;
    for (auto _ : state) {
        cloud.zero_grad();
        render_cloud_backward(cloud, view, background, settings, adjoints, cloud.grad);
        benchmark::DoNotOptimize(cloud.grad.centers.data());
    }
}

void bench_grid(benchmark::State& state, bool parallel) {
    const GaussianCloud cloud = make_cloud(static_cast<std::size_t>(state.range(0)), 7);
    const DensityField field = make_density_field(cloud);
    const GridSpec grid = fit_grid(field, static_cast<int>(state.range(1)), 0.1);
    for (auto _ : state) {
        std::vector<double> values = sample_density_grid(field, grid, parallel);
        benchmark::DoNotOptimize(values.data());
    }
}

void forward_serial(benchmark::State& s) { bench_forward(s, false); }
void forward_parallel(benchmark::State& s) { bench_forward(s, true); }
void backward_serial(benchmark::State& s) { bench_backward(s, false); }
void backward_parallel(benchmark::State& s) { bench_backward(s, true); }
void grid_serial(benchmark::State& s) { bench_grid(s, false); }
void grid_parallel(benchmark::State& s) { bench_grid(s, true); }

BENCHMARK(forward_serial)->Args({256, 64})->Args({1024, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(forward_parallel)->Args({256, 64})->Args({1024, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(backward_serial)->Args({256, 64})->Args({1024, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(backward_parallel)->Args({256, 64})->Args({1024, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(grid_serial)->Args({256, 64})->Args({1024, 96})->Unit(benchmark::kMillisecond);
BENCHMARK(grid_parallel)->Args({256, 64})->Args({1024, 96})->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
