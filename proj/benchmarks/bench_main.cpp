#include <benchmark/benchmark.h>

#include "bisvp/model.hpp"
#include "bisvp/ops.hpp"
#include "bisvp/raster.hpp"
#include "bisvp/rng.hpp"

using namespace bisvp;
using num::Tensor;

namespace {

Tensor random_tensor(num::Shape shape, Rng& rng) {
  std::vector<double> v(num::shape_numel(shape));
  for (double& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v));
}

void BM_conv2d(benchmark::State& state) {
  Rng rng(0);
  const auto side = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({32, side, side}, rng);
  const Tensor w = random_tensor({64, 32, 3, 3}, rng);
  const Tensor b = Tensor::zeros({64});
  num::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(num::conv2d(x, w, b, 1, 1));
}
BENCHMARK(BM_conv2d)->Arg(16)->Arg(32)->Arg(64);

void BM_conv2d_backward(benchmark::State& state) {
  Rng rng(1);
  Tensor x = random_tensor({32, 32, 32}, rng);
  Tensor w = random_tensor({64, 32, 3, 3}, rng);
  w.set_requires_grad(true);
  const Tensor b = Tensor::zeros({64});
  for (auto _ : state) {
    num::sum(num::conv2d(x, w, b, 1, 1)).backward();
    w.zero_grad();
  }
}
BENCHMARK(BM_conv2d_backward);

void BM_raster_iou(benchmark::State& state) {
  const geom::Polygon a({{3.5, 4.0}, {60.2, 8.1}, {55.0, 50.3}, {30.0, 62.0}, {6.0, 40.0}});
  const geom::Polygon b({{10.0, 0.0}, {70.0, 20.0}, {40.0, 70.0}});
  for (auto _ : state) benchmark::DoNotOptimize(geom::raster_iou(a, b));
}
BENCHMARK(BM_raster_iou);

void BM_decode_step(benchmark::State& state) {
  const model::BisvpModel m(model::ModelConfig{}, 0);
  Rng rng(2);
  const Tensor feature = random_tensor({64, 64}, rng);
  const model::BranchContext ctx = m.begin_branch(geom::Direction::clockwise, feature, 0);
  const model::DecodeState s = m.initial_state(ctx);
  num::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(m.decode_step(ctx, s, model::DecodeMode::greedy));
}
BENCHMARK(BM_decode_step);

void BM_backbone_fpn(benchmark::State& state) {
  const model::BisvpModel m(model::ModelConfig{}, 0);
  Rng rng(3);
  const Tensor image = random_tensor({3, 128, 128}, rng);
  num::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(m.backbone_fpn(image));
}
BENCHMARK(BM_backbone_fpn);

}  // namespace
BENCHMARK_MAIN();
