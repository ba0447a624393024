#include "mixce/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mixce {

std::size_t categorical_sample(std::span<const double> dist,
                               SeedStream& stream) {
  if (dist.empty()) {
    throw std::invalid_argument("categorical_sample: empty distribution");
  }
  double total = 0.0;
  for (double p : dist) {
    if (!(p >= 0.0)) {
      throw std::invalid_argument("categorical_sample: negative probability");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument(
        "categorical_sample: distribution does not sum to 1");
  }
  const double u = stream.uniform();
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] > 0.0) last_positive = i;
    acc += dist[i];
    if (u < acc) return i;
  }
  // Accumulated rounding can leave acc a hair under 1; land on the last
  // token that has any mass.
  return last_positive;
}

NodeId gumbel_softmax_sample(Tape& tape, NodeId probs, double tau,
                             SeedStream& noise) {
  if (!(tau > 0.0)) {
    throw std::invalid_argument("gumbel_softmax_sample: tau must be > 0");
  }
  const Tensor& p = tape.value(probs);
  for (double v : p.values) {
    if (!(v > 0.0)) {
      throw std::invalid_argument(
          "gumbel_softmax_sample: probabilities must be strictly positive");
    }
  }
  Tensor g = Tensor::zeros(p.rows(), p.cols());
  for (double& v : g.values) v = noise.gumbel();
  const NodeId perturbed =
      tape.add(tape.log_plus(probs, 0.0), tape.constant(std::move(g)));
  return tape.row_softmax(tape.scale(perturbed, 1.0 / tau));
}

std::vector<double> top_p_filter(std::span<const double> dist, double p) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw std::invalid_argument("top_p_filter: p must be in (0, 1]");
  }
  double total = 0.0;
  for (double q : dist) {
    if (!(q >= 0.0)) {
      throw std::invalid_argument("top_p_filter: negative probability");
    }
    total += q;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("top_p_filter: distribution does not sum to 1");
  }
  std::vector<double> out(dist.begin(), dist.end());
  if (p == 1.0) return out;  // full nucleus: exact identity

  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  // stable_sort keeps equal-probability tokens in index order, so ties
  // resolve toward the lower token index.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return dist[a] > dist[b];
                   });
  double kept_mass = 0.0;
  std::size_t kept = 0;
  for (; kept < order.size(); ++kept) {
    kept_mass += dist[order[kept]];
    if (kept_mass >= p) {
      ++kept;
      break;
    }
  }
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < kept; ++i) {
    out[order[i]] = dist[order[i]] / kept_mass;
  }
  return out;
}

TokenSequence generate(const NeuralBigramLM& model,
                       const TokenSequence& prompt, std::size_t max_len,
                       double p, SeedStream& stream) {
  if (max_len == 0) {
    throw std::invalid_argument("generate: max_len must be >= 1");
  }
  validate_sequence(prompt, model.vocab_size(), model.eos_id());
  if (prompt.terminated || prompt.tokens.size() >= max_len) {
    return prompt;
  }
  TokenSequence seq = prompt;
  std::vector<double> prev(model.vocab_size(), 0.0);
  while (seq.tokens.size() < max_len) {
    std::vector<double> dist;
    if (seq.tokens.empty()) {
      dist = model.start_dist(Mode::kEval);
    } else {
      const auto last = static_cast<std::size_t>(seq.tokens.back());
      prev[last] = 1.0;
      dist = model.next_token_dist(prev, Mode::kEval);
      prev[last] = 0.0;
    }
    const std::vector<double> filtered = top_p_filter(dist, p);
    const auto tok =
        static_cast<std::int32_t>(categorical_sample(filtered, stream));
    seq.tokens.push_back(tok);
    if (tok == model.eos_id()) {
      seq.terminated = true;
      return seq;
    }
  }
  seq.terminated = false;
  return seq;
}

RelaxedRollouts rollout_relaxed(Tape& tape, const TapeModel& tm,
                                std::size_t count,
                                std::size_t max_rollout_len, double tau,
                                SeedStream& noise, const BigramWorld* world,
                                Mode mode, SeedStream* dropout) {
  if (count == 0) {
    throw std::invalid_argument("rollout_relaxed: need at least one rollout");
  }
  if (max_rollout_len == 0) {
    throw std::invalid_argument("rollout_relaxed: max_rollout_len must be >= 1");
  }
  if (!(tau > 0.0)) {
    throw std::invalid_argument("rollout_relaxed: tau must be > 0");
  }
  const std::size_t v = tm.model->vocab_size();
  const auto eos = static_cast<std::size_t>(tm.model->eos_id());

  RelaxedRollouts out;
  out.count = count;
  out.tau = tau;
  out.lengths.assign(count, 0);
  out.hard_tokens.assign(count, TokenSequence{});

  // Gold log tables as tape constants (only when scoring under the world).
  NodeId log_pi_col = 0;
  NodeId log_m = 0;
  if (world != nullptr) {
    if (world->vocab_size() != v) {
      throw std::invalid_argument("rollout_relaxed: world/model vocab mismatch");
    }
    Tensor lp = Tensor::zeros(v, std::size_t{1});
    for (std::size_t i = 0; i < v; ++i) {
      lp.values[i] = std::log(world->start()[i] + kLogFloor);
    }
    log_pi_col = tape.constant(std::move(lp));
    Tensor lm = world->transition();
    for (double& x : lm.values) x = std::log(x + kLogFloor);
    log_m = tape.constant(std::move(lm));
    out.has_log_p = true;
  }

  NodeId acc_q = tape.constant(Tensor::zeros(count, std::size_t{1}));
  NodeId acc_p = out.has_log_p
                     ? tape.constant(Tensor::zeros(count, std::size_t{1}))
                     : 0;

  // Rows still running; row r of the step tensors belongs to rollout
  // alive[r]. Finished rollouts are dropped from the batch entirely.
  std::vector<std::size_t> alive(count);
  std::iota(alive.begin(), alive.end(), 0);
  std::vector<bool> done(count, false);

  NodeId y_prev = 0;  // previous relaxed sample, rows aligned with `alive`
  for (std::size_t t = 0; t < max_rollout_len && !alive.empty(); ++t) {
    const std::size_t rows = alive.size();

    // Previous-token context in V+1 columns (BOS flag in column V).
    NodeId context;
    if (t == 0) {
      Tensor bos = Tensor::zeros(rows, v + 1);
      for (std::size_t r = 0; r < rows; ++r) bos.at(r, v) = 1.0;
      context = tape.constant(std::move(bos));
    } else {
      context = tape.pad_cols(y_prev, 1);
    }
    // Sample and score through the logits: softmax((z+g)/tau) equals the
    // Gumbel-Softmax of the probability row by shift invariance, and
    // z - logsumexp(z) is log q computed so zero-forced tokens (softmax
    // underflow) keep finite log-probabilities instead of -inf.
    const NodeId z = tm.forward_rows_logits(tape, context, mode, dropout);
    Tensor gn = Tensor::zeros(rows, v);
    for (double& x : gn.values) x = noise.gumbel();
    const NodeId y = tape.row_softmax(
        tape.scale(tape.add(z, tape.constant(std::move(gn))), 1.0 / tau));

    // Per-row contributions; the EOS-emitting step is still active.
    const NodeId contrib_q =
        tape.row_sum(tape.mul(y, tape.row_log_softmax(z)));
    NodeId contrib_p = 0;
    if (out.has_log_p) {
      if (t == 0) {
        contrib_p = tape.matmul(y, log_pi_col);
      } else {
        contrib_p = tape.row_sum(tape.mul(tape.matmul(y_prev, log_m), y));
      }
    }

    // Scatter this step's rows back into the per-rollout accumulators.
    Tensor scatter = Tensor::zeros(count, rows);
    for (std::size_t r = 0; r < rows; ++r) scatter.at(alive[r], r) = 1.0;
    const NodeId scatter_node = tape.constant(std::move(scatter));
    acc_q = tape.add(acc_q, tape.matmul(scatter_node, contrib_q));
    if (out.has_log_p) {
      acc_p = tape.add(acc_p, tape.matmul(scatter_node, contrib_p));
    }

    out.steps.push_back(y);
    out.step_rollout_ids.push_back(alive);
    out.done_mask.emplace_back(done.begin(), done.end());
    out.total_steps += rows;

    // Hard decode decides termination; survivors carry to the next step.
    const Tensor& yv = tape.value(y);
    std::vector<std::size_t> next_alive;
    std::vector<std::size_t> survivor_rows;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = yv.values.data() + r * v;
      std::size_t arg = 0;
      for (std::size_t j = 1; j < v; ++j) {
        if (row[j] > row[arg]) arg = j;
      }
      const std::size_t id = alive[r];
      out.hard_tokens[id].tokens.push_back(static_cast<std::int32_t>(arg));
      out.lengths[id] += 1;
      if (arg == eos) {
        out.hard_tokens[id].terminated = true;
        done[id] = true;
      } else {
        next_alive.push_back(id);
        survivor_rows.push_back(r);
      }
    }
    if (next_alive.empty() || t + 1 == max_rollout_len) {
      alive.clear();
      break;
    }
    y_prev = survivor_rows.size() == rows
                 ? y
                 : tape.row_gather(y, survivor_rows);
    alive = std::move(next_alive);
  }

  out.relaxed_log_q = acc_q;
  if (out.has_log_p) out.relaxed_log_p = acc_p;
  return out;
}

}  // namespace mixce
