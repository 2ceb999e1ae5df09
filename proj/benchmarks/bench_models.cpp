#include <benchmark/benchmark.h>

#include <filesystem>

#include "satqa/distortion.hpp"
#include "satqa/fusion.hpp"
#include "satqa/image.hpp"
#include "satqa/scl.hpp"

using namespace satqa;

namespace {

const ModelPreset& desk() {
  static const ModelPreset p = ModelPreset::load(std::filesystem::path(SATQA_PRESET_DIR) / "desk.preset");
  return p;
}

Tensor input(std::uint64_t seed) {
  return to_model_input(synth::generate_reference(desk().input_size, desk().input_size, seed));
}

void BM_EncoderFeatures(benchmark::State& state) {
  SclModel model(desk(), 1);
  const Tensor x = input(1);
  for (auto _ : state) benchmark::DoNotOptimize(degradation_features(model, x).data());
}
BENCHMARK(BM_EncoderFeatures)->Unit(benchmark::kMillisecond);

void BM_QualityForward(benchmark::State& state) {
  SclModel scl(desk(), 1);
  QualityModel q(desk(), ModelOptions::parse("+scl+msb+pab"), 2);
  const Tensor x = input(2);
  const Tensor P = degradation_features(scl, x);
  for (auto _ : state) {
    ag::Graph g(false);
    benchmark::DoNotOptimize(q.forward(g, g.constant(x), &P).value().data());
  }
}
BENCHMARK(BM_QualityForward)->Unit(benchmark::kMillisecond);

void BM_QualityTrainStep(benchmark::State& state) {
  SclModel scl(desk(), 1);
  QualityModel q(desk(), ModelOptions::parse("+scl+msb+pab"), 2);
  const Tensor x = input(3);
  const Tensor P = degradation_features(scl, x);
  for (auto _ : state) {
    ag::Graph g;
    ag::Var y = q.forward(g, g.constant(x), &P);
    g.backward(y);
    benchmark::DoNotOptimize(y.value().data());
  }
}
BENCHMARK(BM_QualityTrainStep)->Unit(benchmark::kMillisecond);

void BM_Distortion(benchmark::State& state) {
  const auto img = synth::generate_reference(256, 256, 4);
  const auto fam = synth::default_bank()[static_cast<std::size_t>(state.range(0))];
  state.SetLabel(fam.name);
  for (auto _ : state) benchmark::DoNotOptimize(synth::apply_distortion(img, fam, 3, 9).pixels().data());
}
BENCHMARK(BM_Distortion)->DenseRange(0, 5)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
