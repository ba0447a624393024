#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mixce/model.hpp"
#include "mixce/sampling.hpp"
#include "mixce/tape.hpp"
#include "mixce/world.hpp"

namespace mixce {

enum class ObjectiveKind {
  kForwardKL,
  kReverseKL,
  kMixKL,
  kGeneralizedJS,
  kMixCEOracle,
  kMixCEApprox,
  kSeqWeightedRevCE,
};

std::string to_string(ObjectiveKind kind);
ObjectiveKind objective_kind_from_string(const std::string& name);

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::kForwardKL;
  double eta = 0.5;  // weight on the forward term; ignored by the pure kinds
  std::size_t mc_samples = 0;  // rollouts per batch; 0 = match data batch size
  double tau = 1.0;            // Gumbel-Softmax temperature

  // Kinds whose loss needs the gold world (scoring rollouts or data under P).
  bool requires_world() const;
  // Kinds whose loss needs model rollouts at this eta. Mixtures at eta = 1
  // collapse to their forward component and sample nothing.
  bool uses_rollouts() const;
  std::size_t rollout_count(std::size_t batch_sequences) const;
  void validate() const;
};

// One-hot encoding of a sequence batch for a single model forward pass.
// Row t of `inputs` holds the conditioning token of the t-th prediction
// (BOS flag in column V); row t of `targets` holds the predicted token.
// `segments` maps sequences to their token rows for sequence-level sums.
struct BatchEncoding {
  std::size_t vocab_size = 0;
  std::int32_t eos_id = 0;
  std::size_t token_count = 0;  // N: rows of inputs/targets
  std::size_t seq_count = 0;    // S: rows of segments
  Tensor inputs;                // N x (V+1)
  Tensor targets;               // N x V
  Tensor segments;              // S x N, 0/1
  std::vector<std::size_t> seq_len;
  // Per-sequence gold log-probability; filled only when a world is given.
  std::vector<double> gold_log_prob;

  static BatchEncoding build(std::span<const TokenSequence> batch,
                             std::size_t vocab_size, std::int32_t eos_id,
                             const BigramWorld* world = nullptr);
};

// Per-term breakdown of a loss; the terms always sum back to the loss value
// (within 1e-9). Counters describe how much data/sampling fed the estimate.
struct LossDiagnostics {
  double forward_term = 0.0;   // data-side contribution
  double reverse_term = 0.0;   // rollout-side contribution
  double entropy_term = 0.0;   // E[log Q] part where a KL decomposes
  double constant_term = 0.0;  // theta-independent additive constant
  std::size_t data_tokens = 0;
  std::size_t data_sequences = 0;
  std::size_t rollout_tokens = 0;
  std::size_t rollouts = 0;
  std::string estimator;  // notes on estimator choices, when non-obvious
};

struct LossValue {
  NodeId node = 0;      // scalar node to minimize
  double value = 0.0;   // forward value of that node
  LossDiagnostics diag;
};

// Token-mean data cross-entropy: -mean_t log q(x_t | x_{t-1}).
LossValue forward_ce(Tape& tape, const TapeModel& tm,
                     const BatchEncoding& batch, Mode mode = Mode::kTrain,
                     SeedStream* dropout = nullptr);

// forward_ce plus the batch estimate of E[log P] (a theta-constant), so the
// value estimates KL(P || Q) while the gradient stays that of forward_ce.
LossValue forward_kl(Tape& tape, const TapeModel& tm, const BigramWorld& world,
                     const BatchEncoding& batch, Mode mode = Mode::kTrain,
                     SeedStream* dropout = nullptr);

// -sum_r relaxed_log_p / total active steps; gradients flow through the
// Gumbel-Softmax rollout path. Rollouts must have been built with the world.
LossValue reverse_ce_oracle(Tape& tape, const RelaxedRollouts& rollouts);

// (sum_r relaxed_log_q - sum_r relaxed_log_p) / total active steps;
// diagnostics expose the reverse-CE and E[log Q] parts separately.
LossValue reverse_kl(Tape& tape, const RelaxedRollouts& rollouts);

// eta * forward_kl + (1 - eta) * reverse_kl. At eta in {0, 1} the dead side
// is not built at all, so the live side is reproduced bit for bit.
// `rollouts` may be null only at eta = 1.
LossValue mix_kl(Tape& tape, const TapeModel& tm, const BigramWorld& world,
                 const BatchEncoding& batch, const RelaxedRollouts* rollouts,
                 double eta, Mode mode = Mode::kTrain,
                 SeedStream* dropout = nullptr);

// Generalized Jensen-Shannon with mixture weight eta in (0, 1), estimated
// sequence-level: data terms log P - log(eta P + (1-eta) Q), rollout terms
// log Q - log(...), all in log space. Sequence-mean normalized.
LossValue generalized_js(Tape& tape, const TapeModel& tm,
                         const BigramWorld& world, const BatchEncoding& batch,
                         const RelaxedRollouts& rollouts, double eta,
                         Mode mode = Mode::kTrain,
                         SeedStream* dropout = nullptr);

// eta * forward_ce + (1 - eta) * reverse_ce_oracle, endpoint-exact like
// mix_kl. `rollouts` may be null only at eta = 1.
LossValue mixce_oracle(Tape& tape, const TapeModel& tm,
                       const BigramWorld& world, const BatchEncoding& batch,
                       const RelaxedRollouts* rollouts, double eta,
                       Mode mode = Mode::kTrain, SeedStream* dropout = nullptr);

// Token-weighted approximation needing no world: token-mean of
// -w_t log q_t with w_t = eta + (1 - eta) * stopgrad(q_t). `frozen_weights`
// (length = token count) replaces the self-computed weights with fixed
// constants so finite-difference checks see the same weights the analytic
// gradient treats as constant.
LossValue mixce_approx(Tape& tape, const TapeModel& tm,
                       const BatchEncoding& batch, double eta,
                       Mode mode = Mode::kTrain, SeedStream* dropout = nullptr,
                       const std::vector<double>* frozen_weights = nullptr);

// Sequence-weighted approximation: -mean_s stopgrad(prod_t q_t) sum_t
// log q_t. Guarded to sequences of at most 64 tokens (the product
// underflows beyond that); intended for tiny-scale validation.
LossValue seq_weighted_rev_ce(Tape& tape, const TapeModel& tm,
                              const BatchEncoding& batch,
                              Mode mode = Mode::kTrain,
                              SeedStream* dropout = nullptr,
                              const std::vector<double>* frozen_weights =
                                  nullptr);

// Dispatch on spec.kind; used by the trainer. Preconditions: `world` present
// when the spec requires it, `rollouts` present (built against this model,
// with world scores) when the spec samples at this eta. ForwardKL degrades
// to forward_ce when no world is given (identical gradient).
LossValue build_loss(Tape& tape, const TapeModel& tm, const ObjectiveSpec& spec,
                     const BatchEncoding& batch,
                     const RelaxedRollouts* rollouts, const BigramWorld* world,
                     Mode mode = Mode::kTrain, SeedStream* dropout = nullptr);

// Tape-free objective value on held-out data, for model selection. Scores
// data and hard ancestral samples (temperature 1) from the frozen model
// tables; `sample_stream` supplies all sampling noise, so passing a copy of
// a fixed stream each epoch makes values comparable across epochs.
struct ObjectiveValue {
  double value = 0.0;
  LossDiagnostics diag;
};

ObjectiveValue objective_value(const ObjectiveSpec& spec,
                               const NeuralBigramLM& model,
                               const BigramWorld* world,
                               std::span<const TokenSequence> data,
                               std::size_t max_rollout_len,
                               SeedStream sample_stream);

}  // namespace mixce
