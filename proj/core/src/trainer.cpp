#include "mixce/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "json_io.hpp"

namespace mixce {

namespace {

// Adam with bias correction; one moment pair per parameter tensor.
struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t t = 0;
  std::vector<Tensor> m, v;

  explicit Adam(const std::vector<Tensor*>& params) {
    for (const Tensor* p : params) {
      m.push_back(Tensor::zeros(p->rows(), p->cols()));
      v.push_back(Tensor::zeros(p->rows(), p->cols()));
    }
  }

  void step(const std::vector<Tensor*>& params,
            const std::vector<Tensor>& grads, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[i][k] = beta1 * m[i][k] + (1.0 - beta1) * g[k];
        v[i][k] = beta2 * v[i][k] + (1.0 - beta2) * g[k] * g[k];
        const double mhat = m[i][k] / c1;
        const double vhat = v[i][k] / c2;
        p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

void check_dataset(const Dataset& ds, std::size_t vocab, const char* name) {
  if (ds.sequences.empty()) {
    throw std::invalid_argument(std::string("train: empty ") + name +
                                " dataset");
  }
  if (ds.vocab_size != vocab) {
    throw std::invalid_argument(std::string("train: ") + name +
                                " dataset vocab mismatch");
  }
}

std::string format_eta(double eta) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", eta);
  return buf;
}

detail::json cell_to_json(const SweepCell& cell) {
  detail::json j;
  j["eta"] = cell.eta;
  j["seed"] = cell.seed;
  j["status"] = cell.status;
  if (cell.status == "failed") {
    j["error"] = cell.error;
  } else {
    j["avg_js"] = cell.metrics.avg_js;
    j["avg_0s"] = cell.metrics.avg_0s;
    j["val_loss"] = cell.val_loss;
    j["best_epoch"] = cell.best_epoch;
  }
  return j;
}

void aggregate_eta(const std::vector<SweepCell>& cells, std::size_t n_seeds,
                   SweepResult& out, std::span<const double> etas) {
  for (std::size_t e = 0; e < etas.size(); ++e) {
    EtaAggregate agg;
    agg.eta = etas[e];
    std::vector<double> js, zeros;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const SweepCell& cell = cells[e * n_seeds + s];
      if (!cell.ok()) continue;
      js.push_back(cell.metrics.avg_js);
      zeros.push_back(cell.metrics.avg_0s);
    }
    agg.complete = js.size() == n_seeds;
    if (!js.empty()) {
      auto mean_sd = [](const std::vector<double>& xs) {
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double var = 0.0;
        for (double x : xs) var += (x - mean) * (x - mean);
        const double sd = xs.size() > 1
                              ? std::sqrt(var / static_cast<double>(xs.size() - 1))
                              : 0.0;
        return std::pair<double, double>(mean, sd);
      };
      std::tie(agg.js_mean, agg.js_stddev) = mean_sd(js);
      std::tie(agg.zeros_mean, agg.zeros_stddev) = mean_sd(zeros);
    }
    out.aggregates.push_back(agg);
  }
  // Best eta over complete aggregates; ties break toward the larger eta
  // (closer to plain MLE).
  double best = 0.0;
  for (const EtaAggregate& agg : out.aggregates) {
    if (!agg.complete) continue;
    if (!out.has_best || agg.js_mean < best ||
        (agg.js_mean == best && agg.eta > out.best_eta)) {
      out.best_eta = agg.eta;
      best = agg.js_mean;
      out.has_best = true;
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  objective.validate();
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  }
  if (max_epochs == 0) {
    throw std::invalid_argument("TrainConfig: max_epochs must be >= 1");
  }
  if (batch_size == 0) {
    throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  }
  if (patience == 0) {
    throw std::invalid_argument("TrainConfig: patience must be >= 1");
  }
  if (hidden_dim == 0) {
    throw std::invalid_argument("TrainConfig: hidden_dim must be >= 1");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw std::invalid_argument("TrainConfig: dropout_rate must be in [0, 1)");
  }
  if (max_len == 0) {
    throw std::invalid_argument("TrainConfig: max_len must be >= 1");
  }
}

std::string TrainResult::trace_json() const {
  detail::json j;
  j["best_epoch"] = checkpoint.epoch;
  detail::json epochs = detail::json::array();
  for (const EpochStats& e : trace) {
    detail::json row;
    row["epoch"] = e.epoch;
    row["train_loss"] = e.train_loss;
    row["val_loss"] = e.val_loss;
    epochs.push_back(row);
  }
  j["epochs"] = epochs;
  return j.dump(2) + "\n";
}

TrainResult train(const TrainConfig& config, const BigramWorld* world,
                  const Dataset& train_set, const Dataset& valid_set,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  config.validate();
  const ObjectiveSpec& spec = config.objective;
  if (spec.requires_world() && world == nullptr) {
    throw std::invalid_argument("train: " + to_string(spec.kind) +
                                " needs the gold world");
  }
  const std::size_t vocab = train_set.vocab_size;
  check_dataset(train_set, vocab, "train");
  check_dataset(valid_set, vocab, "validation");
  if (world != nullptr && world->vocab_size() != vocab) {
    throw std::invalid_argument("train: world/dataset vocab mismatch");
  }

  const SeedStream run(config.seed);
  NeuralBigramLM model = NeuralBigramLM::init(
      {vocab, config.hidden_dim, config.dropout_rate}, run.derive("init"));
  SeedStream shuffle_stream = run.derive("shuffle");
  SeedStream dropout_stream = run.derive("dropout");
  SeedStream gumbel_stream = run.derive("gumbel");
  const SeedStream validation_stream = run.derive("validation");

  Adam adam(model.parameters());
  // Only these kinds read gold scores off the data batch.
  const bool batch_wants_world =
      world != nullptr && (spec.kind == ObjectiveKind::kForwardKL ||
                           spec.kind == ObjectiveKind::kMixKL ||
                           spec.kind == ObjectiveKind::kGeneralizedJS);

  std::vector<std::size_t> order(train_set.sequences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  // Validation rollout count follows the validation set size, not the
  // training-time mc_samples knob.
  ObjectiveSpec vspec = spec;
  vspec.mc_samples = 0;

  TrainResult result;
  double best_val = 0.0;
  bool have_best = false;
  std::vector<Tensor> best_params;
  std::size_t best_epoch = 0;
  std::size_t stale_epochs = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_stream);
    double loss_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += config.batch_size) {
      const std::size_t end =
          std::min(begin + config.batch_size, order.size());
      std::vector<TokenSequence> batch;
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(train_set.sequences[order[i]]);
      }

      Tape tape;
      const TapeModel tm = TapeModel::attach(tape, model);
      const BatchEncoding enc = BatchEncoding::build(
          batch, vocab, train_set.eos_id,
          batch_wants_world ? world : nullptr);
      std::optional<RelaxedRollouts> rollouts;
      if (spec.uses_rollouts()) {
        rollouts = rollout_relaxed(tape, tm, spec.rollout_count(batch.size()),
                                   config.max_len, spec.tau, gumbel_stream,
                                   world, Mode::kTrain, &dropout_stream);
      }
      const LossValue loss =
          build_loss(tape, tm, spec, enc, rollouts ? &*rollouts : nullptr,
                     world, Mode::kTrain, &dropout_stream);
      if (!std::isfinite(loss.value)) {
        throw std::runtime_error("train: loss diverged at epoch " +
                                 std::to_string(epoch));
      }
      tape.backward(loss.node);
      const std::vector<Tensor> grads = tm.parameter_grads(tape);
      adam.step(model.parameters(), grads, config.learning_rate);
      loss_total += loss.value;
      ++batches;
    }

    const ObjectiveValue val =
        objective_value(vspec, model, world, valid_set.sequences,
                        config.max_len, validation_stream);
    result.trace.push_back({epoch, loss_total / static_cast<double>(batches),
                            val.value});
    if (on_epoch) on_epoch(result.trace.back());

    if (!have_best || val.value < best_val) {
      best_val = val.value;
      best_epoch = epoch;
      have_best = true;
      best_params.clear();
      for (const Tensor* p :
           static_cast<const NeuralBigramLM&>(model).parameters()) {
        best_params.push_back(*p);
      }
      stale_epochs = 0;
    } else {
      ++stale_epochs;
      if (stale_epochs >= config.patience) break;
    }
  }

  std::vector<Tensor*> dst = model.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = best_params[i];
  result.checkpoint.model = std::move(model);
  result.checkpoint.epoch = best_epoch;
  result.checkpoint.val_loss = best_val;
  return result;
}

MetricReport evaluate_model(const NeuralBigramLM& model,
                            const BigramWorld& world,
                            std::span<const TokenSequence> data) {
  if (model.vocab_size() != world.vocab_size()) {
    throw std::invalid_argument("evaluate_model: world/model vocab mismatch");
  }
  MetricReport report;
  const Tensor learned = model.extract_transition_matrix();
  report.avg_js = avg_js(world.transition(), learned);
  report.avg_0s = avg_0s(world.transition(), learned);
  report.vocab_size = model.vocab_size();
  if (!data.empty()) {
    const ModelScorer scorer(model);
    std::vector<double> lps;
    for (const TokenSequence& seq : data) {
      const ModelSequenceScore sc = scorer.seq_log_prob(seq);
      for (double q : sc.per_step_prob) lps.push_back(std::log(q));
    }
    report.perplexity = perplexity(lps);
  }
  return report;
}

SweepResult sweep_grid(const TrainConfig& base, std::span<const double> etas,
                       std::size_t n_seeds, const BigramWorld& world,
                       const Dataset& train_set, const Dataset& valid_set,
                       const SweepOptions& options) {
  if (etas.empty()) {
    throw std::invalid_argument("sweep_grid: empty eta grid");
  }
  if (n_seeds == 0) {
    throw std::invalid_argument("sweep_grid: need at least one seed");
  }
  SweepResult result;
  result.cells.resize(etas.size() * n_seeds);

  const bool persist = !options.run_dir.empty();
  std::mutex log_mutex;
  auto log = [&](const std::string& line) {
    if (!options.log) return;
    const std::lock_guard<std::mutex> hold(log_mutex);
    options.log(line);
  };

  auto run_cell = [&](std::size_t index) {
    const std::size_t e = index / n_seeds;
    const std::size_t s = index % n_seeds;
    SweepCell& cell = result.cells[index];
    cell.eta = etas[e];
    cell.seed = base.seed + s;
    const std::string name =
        "cell-" + format_eta(cell.eta) + "-" + std::to_string(cell.seed);
    const std::filesystem::path cell_dir = options.run_dir / name;
    if (persist && !options.force &&
        std::filesystem::exists(cell_dir / "metrics.json")) {
      try {
        cell.metrics = MetricReport::from_json_string(
            detail::read_text_file(cell_dir / "metrics.json"));
        const Checkpoint ck = Checkpoint::load(cell_dir / "checkpoint.json");
        cell.val_loss = ck.val_loss;
        cell.best_epoch = ck.epoch;
        cell.status = "cached";
        log(name + ": cached");
        return;
      } catch (const std::exception&) {
        // Unreadable leftovers: fall through and retrain the cell.
      }
    }
    try {
      TrainConfig config = base;
      config.objective.eta = cell.eta;
      config.seed = cell.seed;
      std::function<void(const EpochStats&)> epoch_sink;
      if (options.on_epoch) {
        epoch_sink = [&options, &log_mutex, name](const EpochStats& stats) {
          const std::lock_guard<std::mutex> hold(log_mutex);
          options.on_epoch(name, stats);
        };
      }
      const TrainResult trained =
          train(config, &world, train_set, valid_set, epoch_sink);
      cell.metrics = evaluate_model(trained.checkpoint.model, world,
                                    valid_set.sequences);
      cell.metrics.objective = to_string(config.objective.kind);
      cell.metrics.eta = cell.eta;
      cell.metrics.seed = cell.seed;
      cell.metrics.init = options.init_label;
      cell.val_loss = trained.checkpoint.val_loss;
      cell.best_epoch = trained.checkpoint.epoch;
      cell.status = "ok";
      if (persist) {
        std::filesystem::create_directories(cell_dir);
        trained.checkpoint.save(cell_dir / "checkpoint.json");
        detail::write_text_file(cell_dir / "trace.json",
                                trained.trace_json());
        detail::write_text_file(cell_dir / "metrics.json",
                                cell.metrics.to_json_string());
      }
      log(name + ": avg_js=" + std::to_string(cell.metrics.avg_js));
    } catch (const std::exception& ex) {
      cell.status = "failed";
      cell.error = ex.what();
      log(name + ": failed: " + cell.error);
    }
  };

  const std::size_t total = result.cells.size();
  const std::size_t jobs = std::max<std::size_t>(options.jobs, 1);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < total; ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t workers = std::min(jobs, total);
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= total) return;
          run_cell(i);
        }
      });
    }
    for (std::thread& th : pool) th.join();
  }

  aggregate_eta(result.cells, n_seeds, result, etas);
  if (persist) {
    std::filesystem::create_directories(options.run_dir);
    detail::write_text_file(options.run_dir / "sweep.json",
                            result.to_json_string());
  }
  return result;
}

SweepResult sweep_eta(const TrainConfig& base, std::span<const double> etas,
                      const BigramWorld& world, const Dataset& train_set,
                      const Dataset& valid_set, const SweepOptions& options) {
  return sweep_grid(base, etas, 1, world, train_set, valid_set, options);
}

std::string SweepResult::to_json_string() const {
  detail::json j;
  j["format"] = "mixce-sweep/1";
  detail::json cells_json = detail::json::array();
  for (const SweepCell& cell : cells) cells_json.push_back(cell_to_json(cell));
  j["cells"] = cells_json;
  detail::json aggs = detail::json::array();
  for (const EtaAggregate& agg : aggregates) {
    detail::json a;
    a["eta"] = agg.eta;
    a["complete"] = agg.complete;
    if (agg.complete) {
      a["avg_js_mean"] = agg.js_mean;
      a["avg_js_stddev"] = agg.js_stddev;
      a["avg_0s_mean"] = agg.zeros_mean;
      a["avg_0s_stddev"] = agg.zeros_stddev;
    }
    aggs.push_back(a);
  }
  j["aggregates"] = aggs;
  j["best_eta"] = has_best ? detail::json(best_eta) : detail::json(nullptr);
  return j.dump(2) + "\n";
}

AggregateMetrics multi_seed(const TrainConfig& config, std::size_t n_seeds,
                            const BigramWorld& world, const Dataset& train_set,
                            const Dataset& valid_set) {
  if (n_seeds == 0) {
    throw std::invalid_argument("multi_seed: need at least one seed");
  }
  AggregateMetrics agg;
  agg.seeds = n_seeds;
  std::vector<double> js, zeros;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    TrainConfig run_config = config;
    run_config.seed = config.seed + s;
    const TrainResult trained =
        train(run_config, &world, train_set, valid_set);
    MetricReport report = evaluate_model(trained.checkpoint.model, world,
                                         valid_set.sequences);
    report.objective = to_string(config.objective.kind);
    report.eta = config.objective.eta;
    report.seed = run_config.seed;
    js.push_back(report.avg_js);
    zeros.push_back(report.avg_0s);
    agg.per_seed.push_back(std::move(report));
  }
  auto mean_sd = [&](const std::vector<double>& xs, double& mean, double& sd) {
    mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1))
                       : 0.0;
  };
  mean_sd(js, agg.js_mean, agg.js_stddev);
  mean_sd(zeros, agg.zeros_mean, agg.zeros_stddev);
  return agg;
}

}  // namespace mixce
