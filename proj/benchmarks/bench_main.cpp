#include <benchmark/benchmark.h>

#include <cstddef>
#include <vector>

#include "mixce/corpus.hpp"
#include "mixce/metrics.hpp"
#include "mixce/model.hpp"
#include "mixce/objectives.hpp"
#include "mixce/rng.hpp"
#include "mixce/sampling.hpp"
#include "mixce/tape.hpp"
#include "mixce/world.hpp"

namespace {

const mixce::BigramWorld& bench_world() {
  static const mixce::BigramWorld world =
      mixce::BigramWorld::init_random(20, 0.5, 0.5, mixce::SeedStream(1));
  return world;
}

const mixce::NeuralBigramLM& bench_model() {
  static const mixce::NeuralBigramLM model = mixce::NeuralBigramLM::init(
      {.vocab_size = 20, .hidden_dim = 32, .dropout_rate = 0.0},
      mixce::SeedStream(2));
  return model;
}

const mixce::BatchEncoding& bench_batch() {
  static const mixce::BatchEncoding enc = [] {
    mixce::SeedStream stream(3);
    const mixce::Dataset data =
        mixce::sample_dataset(bench_world(), 64, 64, stream);
    return mixce::BatchEncoding::build(data.sequences, 20,
                                       bench_world().eos_id(),
                                       &bench_world());
  }();
  return enc;
}

}  // namespace

static void BM_WorldSample(benchmark::State& state) {
  mixce::SeedStream stream(4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(bench_world().sample_sequence(500, stream));
  }
}
BENCHMARK(BM_WorldSample);

static void BM_ScorerSeqLogProb(benchmark::State& state) {
  mixce::SeedStream stream(5);
  const mixce::Dataset data =
      mixce::sample_dataset(bench_world(), 64, 64, stream);
  const mixce::ModelScorer scorer(bench_model());
  for (auto _ : state) {
    double total = 0.0;
    for (const mixce::TokenSequence& seq : data.sequences) {
      total += scorer.seq_log_prob(seq).log_prob;
    }
    benchmark::DoNotOptimize(total);
  }
}
BENCHMARK(BM_ScorerSeqLogProb);

static void BM_BatchLossForward(benchmark::State& state) {
  for (auto _ : state) {
    mixce::Tape tape;
    const mixce::TapeModel tm = mixce::TapeModel::attach(tape, bench_model());
    const mixce::LossValue loss =
        mixce::forward_ce(tape, tm, bench_batch(), mixce::Mode::kEval);
    benchmark::DoNotOptimize(loss.value);
  }
}
BENCHMARK(BM_BatchLossForward);

static void BM_BatchLossBackward(benchmark::State& state) {
  for (auto _ : state) {
    mixce::Tape tape;
    const mixce::TapeModel tm = mixce::TapeModel::attach(tape, bench_model());
    const mixce::LossValue loss =
        mixce::forward_ce(tape, tm, bench_batch(), mixce::Mode::kEval);
    tape.backward(loss.node);
    benchmark::DoNotOptimize(tm.parameter_grads(tape));
  }
}
BENCHMARK(BM_BatchLossBackward);

static void BM_RolloutRelaxed(benchmark::State& state) {
  const mixce::SeedStream noise(6);
  for (auto _ : state) {
    mixce::Tape tape;
    const mixce::TapeModel tm = mixce::TapeModel::attach(tape, bench_model());
    mixce::SeedStream g = noise;
    const mixce::RelaxedRollouts rollouts = mixce::rollout_relaxed(
        tape, tm, 16, 64, 1.0, g, &bench_world(), mixce::Mode::kEval);
    benchmark::DoNotOptimize(rollouts.total_steps);
  }
}
BENCHMARK(BM_RolloutRelaxed);

static void BM_ReverseKlStep(benchmark::State& state) {
  const mixce::SeedStream noise(7);
  for (auto _ : state) {
    mixce::Tape tape;
    const mixce::TapeModel tm = mixce::TapeModel::attach(tape, bench_model());
    mixce::SeedStream g = noise;
    const mixce::RelaxedRollouts rollouts = mixce::rollout_relaxed(
        tape, tm, 16, 64, 1.0, g, &bench_world(), mixce::Mode::kEval);
    const mixce::LossValue loss = mixce::reverse_kl(tape, rollouts);
    tape.backward(loss.node);
    benchmark::DoNotOptimize(tm.parameter_grads(tape));
  }
}
BENCHMARK(BM_ReverseKlStep);

static void BM_AvgJs(benchmark::State& state) {
  const mixce::Tensor learned = bench_model().extract_transition_matrix();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        mixce::avg_js(bench_world().transition(), learned));
  }
}
BENCHMARK(BM_AvgJs);

static void BM_ExtractTransitionMatrix(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(bench_model().extract_transition_matrix());
  }
}
BENCHMARK(BM_ExtractTransitionMatrix);

BENCHMARK_MAIN();
