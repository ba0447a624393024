#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mixce/corpus.hpp"
#include "mixce/metrics.hpp"
#include "mixce/model.hpp"
#include "mixce/objectives.hpp"
#include "mixce/world.hpp"

namespace mixce {

struct TrainConfig {
  ObjectiveSpec objective;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;  // epochs without val improvement before stopping
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 32;
  double dropout_rate = 0.1;
  std::size_t max_len = 500;  // rollout length cap for sampled objectives

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;          // parameters of the best-validation epoch
  std::vector<EpochStats> trace;  // one entry per epoch actually run
  std::string trace_json() const;
};

// Minibatch training with adaptive first-order updates (decay 0.9 / 0.999)
// and per-epoch model selection on the validation objective value, which is
// computed with a fixed per-run sampling stream so sampled objectives are
// comparable across epochs. Everything random derives from config.seed:
// identical (config, seed) gives bitwise-identical results. Stops early
// after `patience` epochs without improvement; aborts if the training loss
// turns non-finite. `on_epoch`, when set, observes each epoch as it ends
// and never affects the result.
TrainResult train(const TrainConfig& config, const BigramWorld* world,
                  const Dataset& train_set, const Dataset& valid_set,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

struct SweepCell {
  double eta = 0.0;
  std::uint64_t seed = 0;
  std::string status;  // "ok", "cached" (reloaded from disk), or "failed"
  std::string error;   // set when status == "failed"
  MetricReport metrics;
  double val_loss = 0.0;
  std::size_t best_epoch = 0;

  bool ok() const { return status != "failed"; }
};

struct EtaAggregate {
  double eta = 0.0;
  bool complete = false;  // every seed of this eta produced metrics
  double js_mean = 0.0, js_stddev = 0.0;
  double zeros_mean = 0.0, zeros_stddev = 0.0;
};

struct SweepResult {
  std::vector<SweepCell> cells;          // eta-major, seed-minor order
  std::vector<EtaAggregate> aggregates;  // one per eta in grid order
  bool has_best = false;
  double best_eta = 0.0;  // argmin mean avg_js; ties go to the larger eta

  std::string to_json_string() const;
};

struct SweepOptions {
  // When set, each cell persists checkpoint.json / trace.json /
  // metrics.json under <run_dir>/cell-<eta>-<seed>/ and the summary at
  // <run_dir>/sweep.json; cells whose metrics.json already exists are
  // reloaded instead of retrained unless `force`.
  std::filesystem::path run_dir;
  bool force = false;
  std::size_t jobs = 1;    // parallel cells; each cell stays single-threaded
  std::string init_label;  // provenance string copied into MetricReport meta
  std::function<void(const std::string&)> log;  // optional progress sink
  // Optional per-epoch observer for freshly trained (not cached) cells;
  // called with the cell's directory name and the epoch row.
  std::function<void(const std::string&, const EpochStats&)> on_epoch;
};

// Full (eta x seed) grid: cell (eta_i, base.seed + s) for s in 0..n_seeds-1.
// A cell failure is recorded and the sweep continues; aggregates cover only
// etas where every seed succeeded, and best_eta is chosen among those.
SweepResult sweep_grid(const TrainConfig& base, std::span<const double> etas,
                       std::size_t n_seeds, const BigramWorld& world,
                       const Dataset& train_set, const Dataset& valid_set,
                       const SweepOptions& options = {});

// The single-seed eta sweep of the model-selection protocol.
SweepResult sweep_eta(const TrainConfig& base, std::span<const double> etas,
                      const BigramWorld& world, const Dataset& train_set,
                      const Dataset& valid_set,
                      const SweepOptions& options = {});

struct AggregateMetrics {
  std::size_t seeds = 0;
  double js_mean = 0.0, js_stddev = 0.0;
  double zeros_mean = 0.0, zeros_stddev = 0.0;
  std::vector<MetricReport> per_seed;
};

// Independent runs at seeds base+0..base+n-1 with mean and sample standard
// deviation of avg_js / avg_0s. Any failing seed aborts the aggregate.
AggregateMetrics multi_seed(const TrainConfig& config, std::size_t n_seeds,
                            const BigramWorld& world, const Dataset& train_set,
                            const Dataset& valid_set);

// Metric row for one trained model against the gold world: avg_js / avg_0s
// from the extracted transition matrix, perplexity over `data`.
MetricReport evaluate_model(const NeuralBigramLM& model,
                            const BigramWorld& world,
                            std::span<const TokenSequence> data);

}  // namespace mixce
