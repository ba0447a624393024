#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mixce/model.hpp"
#include "mixce/rng.hpp"
#include "mixce/tape.hpp"
#include "mixce/world.hpp"

namespace mixce {

// Index drawn with exactly the given probabilities via inverse CDF over the
// given order. The distribution must sum to 1 within 1e-9.
std::size_t categorical_sample(std::span<const double> dist,
                               SeedStream& stream);

// Relaxed one-hot rows: y = row_softmax((log(probs) + g) / tau) with
// standard Gumbel noise g. Differentiable w.r.t. probs; every entry of
// probs must be strictly positive.
NodeId gumbel_softmax_sample(Tape& tape, NodeId probs, double tau,
                             SeedStream& noise);

// Nucleus filter: keep the smallest descending-probability prefix whose
// cumulative mass reaches p (boundary token included; ties broken toward
// lower token index), zero the rest, renormalize. p = 1 returns the input
// unchanged.
std::vector<double> top_p_filter(std::span<const double> dist, double p);

// Autoregressive hard sampling through top_p_filter; stops at EOS or when
// max_len tokens have been emitted. A prompt that already terminated is
// returned unchanged.
TokenSequence generate(const NeuralBigramLM& model,
                       const TokenSequence& prompt, std::size_t max_len,
                       double p, SeedStream& stream);

// A batch of Gumbel-Softmax rollouts advanced in lockstep on one tape.
// Rollouts shed rows once their hard argmax emits EOS, so step tensors
// shrink over time; per-step bookkeeping maps surviving rows back to
// rollout ids. The EOS-emitting step itself still contributes; steps after
// it are never built at all, which realizes the "no contribution after
// done" masking exactly.
struct RelaxedRollouts {
  std::size_t count = 0;  // number of rollouts
  double tau = 1.0;

  std::vector<NodeId> steps;                    // y_t nodes (rows x V)
  std::vector<std::vector<std::size_t>> step_rollout_ids;  // row -> rollout
  std::vector<std::vector<bool>> done_mask;     // [step][rollout]
  std::vector<std::size_t> lengths;             // contributing steps each
  std::size_t total_steps = 0;                  // sum of lengths

  NodeId relaxed_log_q = 0;  // (count x 1) per-rollout relaxed log Q
  NodeId relaxed_log_p = 0;  // (count x 1), valid iff has_log_p
  bool has_log_p = false;

  // Hard argmax decode of each rollout (terminated iff EOS fired).
  std::vector<TokenSequence> hard_tokens;
};

// Rolls out `count` relaxed sequences from BOS, at most max_rollout_len
// steps each. relaxed_log_q is always built; relaxed_log_p additionally
// when a world is supplied (reverse objectives). Train mode applies
// dropout inside every forward using `dropout`.
RelaxedRollouts rollout_relaxed(Tape& tape, const TapeModel& tm,
                                std::size_t count,
                                std::size_t max_rollout_len, double tau,
                                SeedStream& noise,
                                const BigramWorld* world = nullptr,
                                Mode mode = Mode::kEval,
                                SeedStream* dropout = nullptr);

}  // namespace mixce
