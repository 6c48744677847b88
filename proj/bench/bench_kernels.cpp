// Serial reference vs OpenMP kernels, plus one full detector gradient pass.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "cloak/kernels.hpp"
#include "cloak/scene.hpp"
#include "cloak/toy_detector.hpp"

using namespace cloak;
using namespace cloak::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = nd(rng);
  return v;
}

ConvShape shape_for(const benchmark::State& state) {
  return ConvShape{8, 12, static_cast<int>(state.range(0)), static_cast<int>(state.range(0))};
}

template <auto Forward>
void BM_ConvForward(benchmark::State& state) {
  const ConvShape s = shape_for(state);
  const auto in = random_vector(s.input_size(), 1), w = random_vector(s.weight_size(), 2),
             b = random_vector(s.out_channels, 3);
  std::vector<double> out(s.output_size());
  for (auto _ : state) {
    Forward(s, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(s.output_size()));
}

template <auto Backward>
void BM_ConvBackwardInput(benchmark::State& state) {
  const ConvShape s = shape_for(state);
  const auto g = random_vector(s.output_size(), 4), w = random_vector(s.weight_size(), 5);
  std::vector<double> out(s.input_size());
  for (auto _ : state) {
    Backward(s, g, w, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <auto Ssim>
void BM_Ssim(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Image a(n, n), b(n, n);
  const auto va = random_vector(a.size(), 6), vb = random_vector(b.size(), 7);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a.data()[i] = 0.5 + 0.1 * va[i];
    b.data()[i] = 0.5 + 0.1 * vb[i];
  }
  for (auto _ : state) benchmark::DoNotOptimize(Ssim(a, b, SsimParams{}));
}

void BM_DetectorGradient(benchmark::State& state) {
  static const ToyDetector det = ToyDetector::load(CLOAK_MODEL_PATH);
  ToyDetector local = det;
  local.set_backend(state.range(0) == 0 ? Backend::kSerial : Backend::kParallel);
  const auto scene = make_corpus(SceneOptions{}, 5, 1).front();
  const auto props = local.propose(scene.image);
  for (auto _ : state) benchmark::DoNotOptimize(local.loss_and_gradient(scene.image, props, 0).loss);
  state.SetLabel(state.range(0) == 0 ? "serial" : "openmp");
}

}  // namespace

BENCHMARK(BM_ConvForward<serial::conv3x3_forward>)->Name("conv_forward/serial")->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(BM_ConvForward<parallel::conv3x3_forward>)->Name("conv_forward/openmp")->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(BM_ConvBackwardInput<serial::conv3x3_backward_input>)->Name("conv_backward_input/serial")->Arg(64);
BENCHMARK(BM_ConvBackwardInput<parallel::conv3x3_backward_input>)->Name("conv_backward_input/openmp")->Arg(64);
BENCHMARK(BM_Ssim<serial::ssim_mean>)->Name("ssim/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Ssim<parallel::ssim_mean>)->Name("ssim/openmp")->Arg(64)->Arg(256);
BENCHMARK(BM_DetectorGradient)->Name("detector_loss_and_gradient")->Arg(0)->Arg(1);

BENCHMARK_MAIN();
