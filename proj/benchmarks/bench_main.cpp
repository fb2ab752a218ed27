// Microbenchmarks for the kernels and loop stages that dominate training:
// dense matmul, row softmax, one full cycle-loss step with backward, a
// single evaluation example and the AP metric.

#include <benchmark/benchmark.h>

#include <vector>

#include "mixloc/array.hpp"
#include "mixloc/encoders.hpp"
#include "mixloc/graph.hpp"
#include "mixloc/metrics.hpp"
#include "mixloc/rng.hpp"
#include "mixloc/scenegen.hpp"
#include "mixloc/trainer.hpp"
#include "mixloc/walk.hpp"

namespace {

using mixloc::Array;
using mixloc::Rng;

Array random_array(Rng& rng, std::vector<std::size_t> shape) {
  Array a(std::move(shape));
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] = rng.normal();
  return a;
}

void bench_matmul(benchmark::State& state) {
  const std::size_t n = std::size_t(state.range(0));
  Rng rng(1);
  const Array a = random_array(rng, {n, n});
  const Array b = random_array(rng, {n, n});
  for (auto _ : state) {
    benchmark::DoNotOptimize(mixloc::matmul(a, b));
  }
}
BENCHMARK(bench_matmul)->Arg(32)->Arg(64)->Arg(128);

void bench_softmax_rows(benchmark::State& state) {
  Rng rng(2);
  const Array x = random_array(rng, {std::size_t(state.range(0)), 64});
  for (auto _ : state) {
    benchmark::DoNotOptimize(mixloc::softmax_rows(x, 0.07));
  }
}
BENCHMARK(bench_softmax_rows)->Arg(64)->Arg(512);

// One training step of the cycle loss at the pinned experiment scale:
// batch of 32 two-source mixtures, forward plus backward.
void bench_cycle_step(benchmark::State& state) {
  mixloc::train::TrainConfig c;
  c.learning_rate = 1e-3;
  c.steps = 1;
  c.seed = 3;
  c.world.seed = 3;
  const mixloc::gen::World world = mixloc::gen::make_world(c.world);
  const mixloc::enc::EncoderDims dims = mixloc::train::encoder_dims(c);

  std::vector<mixloc::gen::Mixture> mixtures;
  for (std::size_t i = 0; i < c.batch_size; ++i) {
    mixtures.push_back(mixloc::gen::sample_mixture(world, c.k, 1000 + i));
  }
  const mixloc::enc::EncoderParams params = mixloc::enc::init_params(7, dims, c.init_scale);

  for (auto _ : state) {
    mixloc::ad::Graph g;
    const mixloc::enc::EncoderVars vars = mixloc::enc::insert_params(g, params);
    std::vector<mixloc::ad::Var> terms;
    for (const mixloc::gen::Mixture& mix : mixtures) {
      mixloc::walk::MixtureVars mv;
      for (const mixloc::gen::Scene& scene : mix.scenes) {
        mv.images.push_back(mixloc::enc::encode_image(g, vars, scene.regions));
      }
      mv.audio = mixloc::enc::encode_audio(g, vars, mix.mixed_audio);
      mv.shifted_audio = mixloc::enc::encode_audio(g, vars, mix.shifted_mixed_audio);
      terms.push_back(mixloc::walk::loss_cycle(mv, c.tau, true));
    }
    mixloc::ad::Var total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = mixloc::ad::add(total, terms[i]);
    total = mixloc::ad::scale(total, 1.0 / double(terms.size()));
    benchmark::DoNotOptimize(g.backward(total));
  }
}
BENCHMARK(bench_cycle_step)->Unit(benchmark::kMillisecond);

void bench_eval_example(benchmark::State& state) {
  mixloc::train::TrainConfig c;
  c.seed = 4;
  c.world.seed = 4;
  c.splits = {0, 1, 1};
  const mixloc::gen::World world = mixloc::gen::make_world(c.world);
  mixloc::train::Checkpoint ckpt;
  ckpt.config = c;
  ckpt.params = mixloc::enc::init_params(5, mixloc::train::encoder_dims(c), c.init_scale);
  ckpt.opt = mixloc::train::make_optimizer(ckpt.params, c.learning_rate);
  const mixloc::gen::Manifest manifest = mixloc::train::manifest_for(c);

  for (auto _ : state) {
    benchmark::DoNotOptimize(mixloc::train::evaluate(ckpt, world, manifest.test));
  }
}
BENCHMARK(bench_eval_example)->Unit(benchmark::kMillisecond);

void bench_pixel_ap(benchmark::State& state) {
  const std::size_t side = std::size_t(state.range(0));
  Rng rng(6);
  const Array map = random_array(rng, {side, side});
  Array mask({side, side});
  for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = rng.index(4) == 0 ? 1.0 : 0.0;
  mask[0] = 1.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mixloc::metrics::pixel_ap(map, mask));
  }
}
BENCHMARK(bench_pixel_ap)->Arg(8)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
