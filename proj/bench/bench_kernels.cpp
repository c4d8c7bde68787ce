// OpenMP kernels against their serial reference counterparts.
//
//   tsxplain_bench --benchmark_filter=Ssa
//   OMP_NUM_THREADS=4 tsxplain_bench

#include <benchmark/benchmark.h>

#include "test_support.hpp"
#include "tsxplain/attribution.hpp"
#include "tsxplain/classifier.hpp"
#include "tsxplain/evaluation.hpp"
#include "tsxplain/reference.hpp"

namespace {

using namespace tsxplain;

constexpr int kVocab = 8;
constexpr std::size_t kLength = 24;
constexpr int kClasses = 2;

struct Fixture {
  ClassifierModel model;
  std::vector<TokenSequence> train;
  std::vector<TokenSequence> test;
  std::vector<AttributionVector> attrs;

  Fixture() {
    Rng rng(1);
    model = testing::random_model(kVocab, kLength, kClasses, 16, {128, 64}, 7);
    train = testing::random_corpus(1400, kLength, kVocab, kClasses, rng, "tr");
    test = testing::random_corpus(300, kLength, kVocab, kClasses, rng, "te");
    attrs = random_attributions(test, 3);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_PredictBatch(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(predict_batch(f.model, f.test));
}

void BM_PredictBatchReference(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(reference::predict_batch(f.model, f.test));
}

MethodConfig method_for(int index) {
  MethodConfig cfg;
  cfg.method = index == 0 ? Method::kSaliency : index == 1 ? Method::kIntegratedGradients
               : index == 2 ? Method::kRise : Method::kLime;
  cfg.rise.masks = 500;
  cfg.lime.samples = 200;
  return cfg;
}

void BM_ExplainBatch(benchmark::State& state) {
  const auto& f = fixture();
  const auto cfg = method_for(static_cast<int>(state.range(0)));
  const std::span<const TokenSequence> subset(f.test.data(), 50);
  state.SetLabel(to_string(cfg.method));
  for (auto _ : state) benchmark::DoNotOptimize(explain_batch(f.model, subset, cfg, 1, TargetMode::kPredicted));
}

void BM_ExplainBatchReference(benchmark::State& state) {
  const auto& f = fixture();
  const auto cfg = method_for(static_cast<int>(state.range(0)));
  const std::span<const TokenSequence> subset(f.test.data(), 50);
  state.SetLabel(to_string(cfg.method));
  for (auto _ : state) {
    benchmark::DoNotOptimize(reference::explain_batch(f.model, subset, cfg, 1, TargetMode::kPredicted));
  }
}

void BM_DeletionCurve(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(deletion_curve(f.model, f.test, f.attrs, "rnd"));
}

void BM_DeletionCurveReference(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(reference::deletion_curve(f.model, f.test, f.attrs));
}

void BM_Ssa(benchmark::State& state) {
  const auto& f = fixture();
  const auto l = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(ssa(f.train, f.test, f.attrs, l, kClasses, "rnd"));
}

void BM_SsaReference(benchmark::State& state) {
  const auto& f = fixture();
  const auto l = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(reference::ssa(f.train, f.test, f.attrs, l, kClasses));
}

BENCHMARK(BM_PredictBatch)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PredictBatchReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExplainBatch)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExplainBatchReference)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DeletionCurve)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DeletionCurveReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Ssa)->DenseRange(1, 3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SsaReference)->DenseRange(1, 3)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
