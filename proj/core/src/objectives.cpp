#include "mixce/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mixce {

namespace {

constexpr std::size_t kSeqWeightMaxLen = 64;

double log_sum_exp2(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Shared forward pass of a data batch: next-token distributions, the
// probability of each target token, and its log.
struct BatchForward {
  NodeId probs = 0;      // N x V
  NodeId picked_q = 0;   // N x 1, q(x_t | x_{t-1})
  NodeId picked_lp = 0;  // N x 1, log of the above
};

BatchForward batch_forward(Tape& tape, const TapeModel& tm,
                           const BatchEncoding& batch, Mode mode,
                           SeedStream* dropout) {
  if (tm.model == nullptr) {
    throw std::invalid_argument("objectives: tape model not attached");
  }
  if (tm.model->vocab_size() != batch.vocab_size) {
    throw std::invalid_argument("objectives: batch/model vocab mismatch");
  }
  BatchForward f;
  const NodeId inputs = tape.constant(batch.inputs);
  f.probs = tm.forward_rows(tape, inputs, mode, dropout);
  const NodeId targets = tape.constant(batch.targets);
  f.picked_q = tape.row_sum(tape.mul(targets, f.probs));
  f.picked_lp = tape.log_plus(f.picked_q, 0.0);
  return f;
}

void require_rollout_scores(const RelaxedRollouts& rollouts,
                            const char* who) {
  if (rollouts.count == 0 || rollouts.total_steps == 0) {
    throw std::invalid_argument(std::string(who) + ": zero rollouts");
  }
  if (!rollouts.has_log_p) {
    throw std::invalid_argument(std::string(who) +
                                ": rollouts carry no gold-world scores");
  }
}

}  // namespace

std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kForwardKL: return "forward_kl";
    case ObjectiveKind::kReverseKL: return "reverse_kl";
    case ObjectiveKind::kMixKL: return "mix_kl";
    case ObjectiveKind::kGeneralizedJS: return "generalized_js";
    case ObjectiveKind::kMixCEOracle: return "mixce_oracle";
    case ObjectiveKind::kMixCEApprox: return "mixce_approx";
    case ObjectiveKind::kSeqWeightedRevCE: return "seq_weighted_rev_ce";
  }
  throw std::logic_error("to_string: bad ObjectiveKind");
}

ObjectiveKind objective_kind_from_string(const std::string& name) {
  if (name == "forward_kl") return ObjectiveKind::kForwardKL;
  if (name == "reverse_kl") return ObjectiveKind::kReverseKL;
  if (name == "mix_kl") return ObjectiveKind::kMixKL;
  if (name == "generalized_js") return ObjectiveKind::kGeneralizedJS;
  if (name == "mixce_oracle") return ObjectiveKind::kMixCEOracle;
  if (name == "mixce_approx") return ObjectiveKind::kMixCEApprox;
  if (name == "seq_weighted_rev_ce") return ObjectiveKind::kSeqWeightedRevCE;
  throw std::invalid_argument("unknown objective: " + name);
}

bool ObjectiveSpec::requires_world() const {
  switch (kind) {
    case ObjectiveKind::kForwardKL:
    case ObjectiveKind::kMixCEApprox:
    case ObjectiveKind::kSeqWeightedRevCE:
      return false;
    default:
      return true;
  }
}

bool ObjectiveSpec::uses_rollouts() const {
  switch (kind) {
    case ObjectiveKind::kReverseKL:
    case ObjectiveKind::kGeneralizedJS:
      return true;
    case ObjectiveKind::kMixKL:
    case ObjectiveKind::kMixCEOracle:
      return eta < 1.0;
    default:
      return false;
  }
}

std::size_t ObjectiveSpec::rollout_count(std::size_t batch_sequences) const {
  if (mc_samples > 0) return mc_samples;
  return std::max<std::size_t>(batch_sequences, 1);
}

void ObjectiveSpec::validate() const {
  if (!(eta >= 0.0 && eta <= 1.0)) {
    throw std::invalid_argument("ObjectiveSpec: eta must be in [0, 1]");
  }
  if (kind == ObjectiveKind::kGeneralizedJS && (eta == 0.0 || eta == 1.0)) {
    throw std::invalid_argument(
        "ObjectiveSpec: generalized_js needs eta strictly inside (0, 1) "
        "(the mixture degenerates at the endpoints)");
  }
  if (!(tau > 0.0)) {
    throw std::invalid_argument("ObjectiveSpec: tau must be > 0");
  }
}

BatchEncoding BatchEncoding::build(std::span<const TokenSequence> batch,
                                   std::size_t vocab_size, std::int32_t eos_id,
                                   const BigramWorld* world) {
  if (batch.empty()) {
    throw std::invalid_argument("BatchEncoding: empty batch");
  }
  if (world != nullptr && world->vocab_size() != vocab_size) {
    throw std::invalid_argument("BatchEncoding: world/batch vocab mismatch");
  }
  BatchEncoding enc;
  enc.vocab_size = vocab_size;
  enc.eos_id = eos_id;
  enc.seq_count = batch.size();
  for (const TokenSequence& seq : batch) {
    validate_sequence(seq, vocab_size, eos_id);
    if (seq.tokens.empty()) {
      throw std::invalid_argument("BatchEncoding: empty sequence");
    }
    enc.token_count += seq.tokens.size();
    enc.seq_len.push_back(seq.tokens.size());
  }
  const std::size_t n = enc.token_count;
  const std::size_t s = enc.seq_count;
  const std::size_t v = vocab_size;
  enc.inputs = Tensor::zeros(n, v + 1);
  enc.targets = Tensor::zeros(n, v);
  enc.segments = Tensor::zeros(s, n);
  std::size_t row = 0;
  for (std::size_t i = 0; i < s; ++i) {
    const auto& toks = batch[i].tokens;
    for (std::size_t t = 0; t < toks.size(); ++t) {
      const std::size_t prev =
          t == 0 ? v : static_cast<std::size_t>(toks[t - 1]);
      enc.inputs.at(row, prev) = 1.0;
      enc.targets.at(row, static_cast<std::size_t>(toks[t])) = 1.0;
      enc.segments.at(i, row) = 1.0;
      ++row;
    }
    if (world != nullptr) {
      enc.gold_log_prob.push_back(world->log_prob(batch[i]).log_prob);
    }
  }
  return enc;
}

LossValue forward_ce(Tape& tape, const TapeModel& tm,
                     const BatchEncoding& batch, Mode mode,
                     SeedStream* dropout) {
  const BatchForward f = batch_forward(tape, tm, batch, mode, dropout);
  const double inv = -1.0 / static_cast<double>(batch.token_count);
  LossValue out;
  out.node = tape.scale(tape.sum(f.picked_lp), inv);
  out.value = tape.scalar_value(out.node);
  out.diag.forward_term = out.value;
  out.diag.data_tokens = batch.token_count;
  out.diag.data_sequences = batch.seq_count;
  return out;
}

LossValue forward_kl(Tape& tape, const TapeModel& tm, const BigramWorld& world,
                     const BatchEncoding& batch, Mode mode,
                     SeedStream* dropout) {
  if (batch.gold_log_prob.size() != batch.seq_count) {
    throw std::invalid_argument(
        "forward_kl: batch was encoded without gold-world scores");
  }
  if (world.vocab_size() != batch.vocab_size) {
    throw std::invalid_argument("forward_kl: world/batch vocab mismatch");
  }
  LossValue out = forward_ce(tape, tm, batch, mode, dropout);
  double gold_total = 0.0;
  for (double lp : batch.gold_log_prob) gold_total += lp;
  const double constant =
      gold_total * (1.0 / static_cast<double>(batch.token_count));
  out.node = tape.add_scalar(out.node, constant);
  out.value = tape.scalar_value(out.node);
  out.diag.constant_term = constant;
  return out;
}

LossValue reverse_ce_oracle(Tape& tape, const RelaxedRollouts& rollouts) {
  require_rollout_scores(rollouts, "reverse_ce_oracle");
  const double inv = -1.0 / static_cast<double>(rollouts.total_steps);
  LossValue out;
  out.node = tape.scale(tape.sum(rollouts.relaxed_log_p), inv);
  out.value = tape.scalar_value(out.node);
  out.diag.reverse_term = out.value;
  out.diag.rollout_tokens = rollouts.total_steps;
  out.diag.rollouts = rollouts.count;
  return out;
}

LossValue reverse_kl(Tape& tape, const RelaxedRollouts& rollouts) {
  require_rollout_scores(rollouts, "reverse_kl");
  const double inv = 1.0 / static_cast<double>(rollouts.total_steps);
  const NodeId entropy = tape.scale(tape.sum(rollouts.relaxed_log_q), inv);
  const NodeId rev_ce = tape.scale(tape.sum(rollouts.relaxed_log_p), -inv);
  LossValue out;
  out.node = tape.add(entropy, rev_ce);
  out.value = tape.scalar_value(out.node);
  out.diag.entropy_term = tape.scalar_value(entropy);
  out.diag.reverse_term = tape.scalar_value(rev_ce);
  out.diag.rollout_tokens = rollouts.total_steps;
  out.diag.rollouts = rollouts.count;
  return out;
}

LossValue mix_kl(Tape& tape, const TapeModel& tm, const BigramWorld& world,
                 const BatchEncoding& batch, const RelaxedRollouts* rollouts,
                 double eta, Mode mode, SeedStream* dropout) {
  if (!(eta >= 0.0 && eta <= 1.0)) {
    throw std::invalid_argument("mix_kl: eta must be in [0, 1]");
  }
  // Endpoints build only the live side, reproducing it bit for bit.
  if (eta == 1.0) return forward_kl(tape, tm, world, batch, mode, dropout);
  if (rollouts == nullptr) {
    throw std::invalid_argument("mix_kl: rollouts required when eta < 1");
  }
  if (eta == 0.0) return reverse_kl(tape, *rollouts);

  const LossValue fwd = forward_kl(tape, tm, world, batch, mode, dropout);
  const LossValue rev = reverse_kl(tape, *rollouts);
  LossValue out;
  out.node = tape.add(tape.scale(fwd.node, eta), tape.scale(rev.node, 1.0 - eta));
  out.value = tape.scalar_value(out.node);
  out.diag.forward_term = eta * fwd.diag.forward_term;
  out.diag.constant_term = eta * fwd.diag.constant_term;
  out.diag.reverse_term = (1.0 - eta) * rev.diag.reverse_term;
  out.diag.entropy_term = (1.0 - eta) * rev.diag.entropy_term;
  out.diag.data_tokens = fwd.diag.data_tokens;
  out.diag.data_sequences = fwd.diag.data_sequences;
  out.diag.rollout_tokens = rev.diag.rollout_tokens;
  out.diag.rollouts = rev.diag.rollouts;
  return out;
}

LossValue generalized_js(Tape& tape, const TapeModel& tm,
                         const BigramWorld& world, const BatchEncoding& batch,
                         const RelaxedRollouts& rollouts, double eta,
                         Mode mode, SeedStream* dropout) {
  if (!(eta > 0.0 && eta < 1.0)) {
    throw std::invalid_argument(
        "generalized_js: eta must lie strictly inside (0, 1)");
  }
  if (batch.gold_log_prob.size() != batch.seq_count) {
    throw std::invalid_argument(
        "generalized_js: batch was encoded without gold-world scores");
  }
  if (world.vocab_size() != batch.vocab_size) {
    throw std::invalid_argument("generalized_js: world/batch vocab mismatch");
  }
  require_rollout_scores(rollouts, "generalized_js");

  const double log_eta = std::log(eta);
  const double log_1m_eta = std::log1p(-eta);

  // Data side: per-sequence log P (constant) vs log Q (tape), mixed in log
  // space, sequence-mean.
  const BatchForward f = batch_forward(tape, tm, batch, mode, dropout);
  const NodeId seq_lq =
      tape.matmul(tape.constant(batch.segments), f.picked_lp);  // S x 1
  Tensor gold = Tensor::zeros(batch.seq_count, std::size_t{1});
  for (std::size_t i = 0; i < batch.seq_count; ++i) {
    gold.values[i] = batch.gold_log_prob[i];
  }
  const NodeId gold_node = tape.constant(std::move(gold));
  const NodeId mix_data = tape.log_add_exp(
      tape.add_scalar(gold_node, log_eta), tape.add_scalar(seq_lq, log_1m_eta));
  const NodeId data_terms = tape.add(gold_node, tape.scale(mix_data, -1.0));
  const NodeId data_mean = tape.mean(data_terms);

  // Rollout side: relaxed log Q vs relaxed log P, same mixture.
  const NodeId mix_roll =
      tape.log_add_exp(tape.add_scalar(rollouts.relaxed_log_p, log_eta),
                       tape.add_scalar(rollouts.relaxed_log_q, log_1m_eta));
  const NodeId roll_terms =
      tape.add(rollouts.relaxed_log_q, tape.scale(mix_roll, -1.0));
  const NodeId roll_mean = tape.mean(roll_terms);

  LossValue out;
  out.node =
      tape.add(tape.scale(data_mean, eta), tape.scale(roll_mean, 1.0 - eta));
  out.value = tape.scalar_value(out.node);
  out.diag.forward_term = eta * tape.scalar_value(data_mean);
  out.diag.reverse_term = (1.0 - eta) * tape.scalar_value(roll_mean);
  out.diag.data_tokens = batch.token_count;
  out.diag.data_sequences = batch.seq_count;
  out.diag.rollout_tokens = rollouts.total_steps;
  out.diag.rollouts = rollouts.count;
  out.diag.estimator = "rollout terms scored via relaxed log-probabilities";
  return out;
}

LossValue mixce_oracle(Tape& tape, const TapeModel& tm,
                       const BigramWorld& world, const BatchEncoding& batch,
                       const RelaxedRollouts* rollouts, double eta, Mode mode,
                       SeedStream* dropout) {
  if (!(eta >= 0.0 && eta <= 1.0)) {
    throw std::invalid_argument("mixce_oracle: eta must be in [0, 1]");
  }
  if (world.vocab_size() != batch.vocab_size) {
    throw std::invalid_argument("mixce_oracle: world/batch vocab mismatch");
  }
  if (eta == 1.0) return forward_ce(tape, tm, batch, mode, dropout);
  if (rollouts == nullptr) {
    throw std::invalid_argument("mixce_oracle: rollouts required when eta < 1");
  }
  if (eta == 0.0) return reverse_ce_oracle(tape, *rollouts);

  const LossValue fwd = forward_ce(tape, tm, batch, mode, dropout);
  const LossValue rev = reverse_ce_oracle(tape, *rollouts);
  LossValue out;
  out.node = tape.add(tape.scale(fwd.node, eta), tape.scale(rev.node, 1.0 - eta));
  out.value = tape.scalar_value(out.node);
  out.diag.forward_term = eta * fwd.diag.forward_term;
  out.diag.reverse_term = (1.0 - eta) * rev.diag.reverse_term;
  out.diag.data_tokens = fwd.diag.data_tokens;
  out.diag.data_sequences = fwd.diag.data_sequences;
  out.diag.rollout_tokens = rev.diag.rollout_tokens;
  out.diag.rollouts = rev.diag.rollouts;
  return out;
}

LossValue mixce_approx(Tape& tape, const TapeModel& tm,
                       const BatchEncoding& batch, double eta, Mode mode,
                       SeedStream* dropout,
                       const std::vector<double>* frozen_weights) {
  if (!(eta >= 0.0 && eta <= 1.0)) {
    throw std::invalid_argument("mixce_approx: eta must be in [0, 1]");
  }
  const BatchForward f = batch_forward(tape, tm, batch, mode, dropout);
  NodeId w = 0;
  if (frozen_weights != nullptr) {
    if (frozen_weights->size() != batch.token_count) {
      throw std::invalid_argument(
          "mixce_approx: frozen weight count does not match token count");
    }
    Tensor wt = Tensor::zeros(batch.token_count, std::size_t{1});
    std::copy(frozen_weights->begin(), frozen_weights->end(),
              wt.values.begin());
    w = tape.constant(std::move(wt));
  } else {
    w = tape.add_scalar(
        tape.scale(tape.stop_gradient(f.picked_q), 1.0 - eta), eta);
  }
  const double inv = -1.0 / static_cast<double>(batch.token_count);
  LossValue out;
  out.node = tape.scale(tape.sum(tape.mul(w, f.picked_lp)), inv);
  out.value = tape.scalar_value(out.node);
  out.diag.forward_term = out.value;
  out.diag.data_tokens = batch.token_count;
  out.diag.data_sequences = batch.seq_count;
  return out;
}

LossValue seq_weighted_rev_ce(Tape& tape, const TapeModel& tm,
                              const BatchEncoding& batch, Mode mode,
                              SeedStream* dropout,
                              const std::vector<double>* frozen_weights) {
  for (std::size_t len : batch.seq_len) {
    if (len > kSeqWeightMaxLen) {
      throw std::invalid_argument(
          "seq_weighted_rev_ce: sequence longer than 64 tokens — the "
          "probability product would underflow");
    }
  }
  const BatchForward f = batch_forward(tape, tm, batch, mode, dropout);
  Tensor w = Tensor::zeros(batch.seq_count, std::size_t{1});
  if (frozen_weights != nullptr) {
    if (frozen_weights->size() != batch.seq_count) {
      throw std::invalid_argument(
          "seq_weighted_rev_ce: frozen weight count does not match "
          "sequence count");
    }
    std::copy(frozen_weights->begin(), frozen_weights->end(),
              w.values.begin());
  } else {
    // Sequence weights are the gradient-stopped probability products,
    // computed outside the tape from the forward values.
    const Tensor& q = tape.value(f.picked_q);
    std::size_t row = 0;
    for (std::size_t i = 0; i < batch.seq_count; ++i) {
      double prod = 1.0;
      for (std::size_t t = 0; t < batch.seq_len[i]; ++t) prod *= q[row++];
      w.values[i] = prod;
    }
  }
  const NodeId w_node = tape.constant(std::move(w));
  const NodeId seq_lq =
      tape.matmul(tape.constant(batch.segments), f.picked_lp);  // S x 1
  const double inv = -1.0 / static_cast<double>(batch.seq_count);
  LossValue out;
  out.node = tape.scale(tape.sum(tape.mul(w_node, seq_lq)), inv);
  out.value = tape.scalar_value(out.node);
  out.diag.reverse_term = out.value;
  out.diag.data_tokens = batch.token_count;
  out.diag.data_sequences = batch.seq_count;
  out.diag.estimator = "self-weighted data log-likelihood";
  return out;
}

LossValue build_loss(Tape& tape, const TapeModel& tm, const ObjectiveSpec& spec,
                     const BatchEncoding& batch,
                     const RelaxedRollouts* rollouts, const BigramWorld* world,
                     Mode mode, SeedStream* dropout) {
  spec.validate();
  if (spec.requires_world() && world == nullptr) {
    throw std::invalid_argument("build_loss: " + to_string(spec.kind) +
                                " needs the gold world");
  }
  if (spec.uses_rollouts() && rollouts == nullptr) {
    throw std::invalid_argument("build_loss: " + to_string(spec.kind) +
                                " needs rollouts at eta=" +
                                std::to_string(spec.eta));
  }
  switch (spec.kind) {
    case ObjectiveKind::kForwardKL:
      return world != nullptr
                 ? forward_kl(tape, tm, *world, batch, mode, dropout)
                 : forward_ce(tape, tm, batch, mode, dropout);
    case ObjectiveKind::kReverseKL:
      return reverse_kl(tape, *rollouts);
    case ObjectiveKind::kMixKL:
      return mix_kl(tape, tm, *world, batch, rollouts, spec.eta, mode,
                    dropout);
    case ObjectiveKind::kGeneralizedJS:
      return generalized_js(tape, tm, *world, batch, *rollouts, spec.eta,
                            mode, dropout);
    case ObjectiveKind::kMixCEOracle:
      return mixce_oracle(tape, tm, *world, batch, rollouts, spec.eta, mode,
                          dropout);
    case ObjectiveKind::kMixCEApprox:
      return mixce_approx(tape, tm, batch, spec.eta, mode, dropout);
    case ObjectiveKind::kSeqWeightedRevCE:
      return seq_weighted_rev_ce(tape, tm, batch, mode, dropout);
  }
  throw std::logic_error("build_loss: bad ObjectiveKind");
}

ObjectiveValue objective_value(const ObjectiveSpec& spec,
                               const NeuralBigramLM& model,
                               const BigramWorld* world,
                               std::span<const TokenSequence> data,
                               std::size_t max_rollout_len,
                               SeedStream sample_stream) {
  spec.validate();
  if (data.empty()) {
    throw std::invalid_argument("objective_value: empty data");
  }
  if (spec.requires_world() && world == nullptr) {
    throw std::invalid_argument("objective_value: " + to_string(spec.kind) +
                                " needs the gold world");
  }
  if (max_rollout_len == 0) {
    throw std::invalid_argument("objective_value: max_rollout_len must be >= 1");
  }
  const ModelScorer scorer(model);
  const std::size_t s = data.size();
  const auto eos = model.eos_id();
  const double eta = spec.eta;

  // Data-side scan in corpus order. The plain and the weighted accumulators
  // see exactly the same addends whenever the weight is identically 1, so
  // e.g. mixce_approx at eta=1 reproduces the forward-CE value bit for bit.
  std::size_t n = 0;
  double lp_sum = 0.0;       // sum of log q_t
  double wlp_sum = 0.0;      // sum of (eta + (1-eta) q_t) log q_t
  double gold_sum = 0.0;     // sum of log P(x)
  std::vector<double> seq_lq(s, 0.0);
  std::vector<double> seq_lp(s, 0.0);
  const bool needs_data = spec.kind != ObjectiveKind::kReverseKL;
  if (needs_data) {
    for (std::size_t i = 0; i < s; ++i) {
      const ModelSequenceScore sc = scorer.seq_log_prob(data[i]);
      n += data[i].tokens.size();
      for (double q : sc.per_step_prob) {
        const double lq = std::log(q);
        lp_sum += lq;
        wlp_sum += (eta + (1.0 - eta) * q) * lq;
      }
      seq_lq[i] = sc.log_prob;
      if (world != nullptr) {
        seq_lp[i] = world->log_prob(data[i]).log_prob;
        gold_sum += seq_lp[i];
      }
    }
  }

  // Rollout side: hard ancestral samples (temperature 1) from the frozen
  // conditional tables, scored exactly under both Q and P.
  const bool needs_rollouts = spec.uses_rollouts();
  const std::size_t r_count = needs_rollouts ? spec.rollout_count(s) : 0;
  std::size_t roll_tokens = 0;
  double roll_lq_sum = 0.0;
  double roll_lp_sum = 0.0;
  std::vector<double> roll_lq(r_count, 0.0);
  std::vector<double> roll_lp(r_count, 0.0);
  if (needs_rollouts) {
    const Tensor& trans = scorer.transition();
    const std::size_t v = scorer.vocab_size();
    for (std::size_t r = 0; r < r_count; ++r) {
      double lq = 0.0;
      std::int32_t prev = -1;
      TokenSequence seq;
      for (std::size_t t = 0; t < max_rollout_len; ++t) {
        std::span<const double> row =
            prev < 0 ? std::span<const double>(scorer.start())
                     : std::span<const double>(
                           trans.values.data() +
                               static_cast<std::size_t>(prev) * v,
                           v);
        const auto tok =
            static_cast<std::int32_t>(categorical_sample(row, sample_stream));
        lq += std::log(row[static_cast<std::size_t>(tok)]);
        seq.tokens.push_back(tok);
        prev = tok;
        if (tok == eos) {
          seq.terminated = true;
          break;
        }
      }
      roll_tokens += seq.tokens.size();
      roll_lq[r] = lq;
      roll_lq_sum += lq;
      if (world != nullptr) {
        roll_lp[r] = world->log_prob(seq).log_prob;
        roll_lp_sum += roll_lp[r];
      }
    }
  }

  const double inv_n = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
  const double inv_s = 1.0 / static_cast<double>(s);
  const double inv_rt =
      roll_tokens > 0 ? 1.0 / static_cast<double>(roll_tokens) : 0.0;
  const double inv_r =
      r_count > 0 ? 1.0 / static_cast<double>(r_count) : 0.0;

  ObjectiveValue out;
  out.diag.data_tokens = needs_data ? n : 0;
  out.diag.data_sequences = needs_data ? s : 0;
  out.diag.rollout_tokens = roll_tokens;
  out.diag.rollouts = r_count;

  const double ce = lp_sum * -inv_n;
  const double kl_const = gold_sum * inv_n;
  const double rev_ce = roll_lp_sum * -inv_rt;
  const double entropy = roll_lq_sum * inv_rt;

  switch (spec.kind) {
    case ObjectiveKind::kForwardKL: {
      out.diag.forward_term = ce;
      if (world != nullptr) out.diag.constant_term = kl_const;
      out.value = out.diag.forward_term + out.diag.constant_term;
      break;
    }
    case ObjectiveKind::kReverseKL: {
      out.diag.reverse_term = rev_ce;
      out.diag.entropy_term = entropy;
      out.value = entropy + rev_ce;
      break;
    }
    case ObjectiveKind::kMixKL: {
      if (eta == 1.0) {
        out.diag.forward_term = ce;
        out.diag.constant_term = kl_const;
        out.value = ce + kl_const;
      } else if (eta == 0.0) {
        out.diag.reverse_term = rev_ce;
        out.diag.entropy_term = entropy;
        out.value = entropy + rev_ce;
      } else {
        out.diag.forward_term = eta * ce;
        out.diag.constant_term = eta * kl_const;
        out.diag.reverse_term = (1.0 - eta) * rev_ce;
        out.diag.entropy_term = (1.0 - eta) * entropy;
        out.value = eta * (ce + kl_const) + (1.0 - eta) * (entropy + rev_ce);
      }
      break;
    }
    case ObjectiveKind::kGeneralizedJS: {
      const double log_eta = std::log(eta);
      const double log_1m_eta = std::log1p(-eta);
      double data_sum = 0.0;
      for (std::size_t i = 0; i < s; ++i) {
        data_sum += seq_lp[i] - log_sum_exp2(log_eta + seq_lp[i],
                                             log_1m_eta + seq_lq[i]);
      }
      double roll_sum = 0.0;
      for (std::size_t r = 0; r < r_count; ++r) {
        roll_sum += roll_lq[r] - log_sum_exp2(log_eta + roll_lp[r],
                                              log_1m_eta + roll_lq[r]);
      }
      out.diag.forward_term = eta * (data_sum * inv_s);
      out.diag.reverse_term = (1.0 - eta) * (roll_sum * inv_r);
      out.value = out.diag.forward_term + out.diag.reverse_term;
      out.diag.estimator = "hard samples scored exactly";
      break;
    }
    case ObjectiveKind::kMixCEOracle: {
      if (eta == 1.0) {
        out.diag.forward_term = ce;
        out.value = ce;
      } else if (eta == 0.0) {
        out.diag.reverse_term = rev_ce;
        out.value = rev_ce;
      } else {
        out.diag.forward_term = eta * ce;
        out.diag.reverse_term = (1.0 - eta) * rev_ce;
        out.value = eta * ce + (1.0 - eta) * rev_ce;
      }
      break;
    }
    case ObjectiveKind::kMixCEApprox: {
      out.diag.forward_term = wlp_sum * -inv_n;
      out.value = out.diag.forward_term;
      break;
    }
    case ObjectiveKind::kSeqWeightedRevCE: {
      double wsum = 0.0;
      std::size_t i = 0;
      for (const TokenSequence& seq : data) {
        if (seq.tokens.size() > kSeqWeightMaxLen) {
          throw std::invalid_argument(
              "objective_value: sequence longer than 64 tokens — the "
              "probability product would underflow");
        }
        const ModelSequenceScore sc = scorer.seq_log_prob(seq);
        double prod = 1.0;
        for (double q : sc.per_step_prob) prod *= q;
        wsum += prod * seq_lq[i];
        ++i;
      }
      out.diag.reverse_term = wsum * -inv_s;
      out.value = out.diag.reverse_term;
      out.diag.estimator = "self-weighted data log-likelihood";
      break;
    }
  }
  if (!std::isfinite(out.value)) {
    throw std::runtime_error("objective_value: non-finite value");
  }
  return out;
}

}  // namespace mixce
