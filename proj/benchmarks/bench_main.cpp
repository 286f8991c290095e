#include <random>

#include <benchmark/benchmark.h>

#include "bgpt/adam.hpp"
#include "bgpt/cpu.hpp"
#include "bgpt/model.hpp"
#include "bgpt/patch.hpp"

namespace {

bgpt::Bytes random_bytes(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  bgpt::Bytes out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

bgpt::Model<float> desk_model() {
  bgpt::ModelParams<float> params(bgpt::ModelConfig::desk());
  params.init(1);
  return bgpt::Model<float>(std::move(params));
}

void BM_Segment(benchmark::State& state) {
  const auto bytes = random_bytes(static_cast<std::size_t>(state.range(0)), 3);
  for (auto _ : state) {
    auto seq = bgpt::segment(bytes, 16, 512);
    benchmark::DoNotOptimize(seq.symbols.data());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * bytes.size()));
}
BENCHMARK(BM_Segment)->Arg(512)->Arg(8192);

void BM_Score(benchmark::State& state) {
  const auto model = desk_model();
  const auto seq = bgpt::segment(random_bytes(static_cast<std::size_t>(state.range(0)), 4), 16,
                                 model.config().max_patches);
  for (auto _ : state) benchmark::DoNotOptimize(model.score(seq).bits);
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * state.range(0)));
}
BENCHMARK(BM_Score)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  auto model = desk_model();
  const auto seq = bgpt::segment(random_bytes(static_cast<std::size_t>(state.range(0)), 5), 16,
                                 model.config().max_patches);
  for (auto _ : state) {
    model.params().zero_grad();
    benchmark::DoNotOptimize(model.forward_backward(seq, {}, 1.0f).bits);
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * state.range(0)));
}
BENCHMARK(BM_ForwardBackward)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

void BM_AdamStep(benchmark::State& state) {
  auto model = desk_model();
  model.params().zero_grad();
  bgpt::Adam<float> adam(model.params().list(), bgpt::AdamConfig{});
  for (auto _ : state) adam.step();
}
BENCHMARK(BM_AdamStep)->Unit(benchmark::kMillisecond);

void BM_CpuGenerate(benchmark::State& state) {
  std::uint64_t index = 0;
  for (auto _ : state) {
    auto rng = bgpt::cpu::instance_rng(11, index++);
    auto inst = bgpt::cpu::generate_instance(rng);
    benchmark::DoNotOptimize(inst.trace.data());
  }
}
BENCHMARK(BM_CpuGenerate);

void BM_CpuStep(benchmark::State& state) {
  auto rng = bgpt::cpu::instance_rng(12, 0);
  const auto memory = bgpt::cpu::random_program(256, rng);
  for (auto _ : state) {
    auto inst = bgpt::cpu::run_program(memory, 0, {});
    benchmark::DoNotOptimize(inst.trace.data());
  }
}
BENCHMARK(BM_CpuStep);

}  // namespace

BENCHMARK_MAIN();
