#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mixce/rng.hpp"
#include "mixce/tape.hpp"
#include "mixce/tensor.hpp"
#include "mixce/world.hpp"

namespace mixce {

enum class Mode { kTrain, kEval };

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 32;
  double dropout_rate = 0.1;
};

struct ModelSequenceScore {
  double log_prob = 0.0;
  std::vector<double> per_step_prob;  // q(x_t | x_{t-1}), one per token
};

// Neural bigram LM: q(. | prev) = softmax(W2 . dropout(relu(W1 . e + b1)) + b2)
// with e the (possibly interpolated) embedding of the previous token.
// Row-vector convention throughout: activations are rows, weights multiply
// on the right. E carries one extra row at index V — the BOS embedding that
// conditions the first token; it is never a vocabulary token.
class NeuralBigramLM {
 public:
  static NeuralBigramLM init(const ModelConfig& config, SeedStream stream);

  const ModelConfig& config() const { return config_; }
  std::size_t vocab_size() const { return config_.vocab_size; }
  std::size_t hidden_dim() const { return config_.hidden_dim; }
  std::int32_t eos_id() const {
    return static_cast<std::int32_t>(config_.vocab_size - 1);
  }

  // The five trained parameter groups; E includes the BOS row (V+1 x d).
  Tensor E, W1, b1, W2, b2;

  // Count over the V*d + d*d + d + d*V + V core entries (BOS row excluded).
  std::size_t core_param_count() const;

  // Distribution over the next token given a previous-token probability
  // vector (one-hot or relaxed). Train mode draws a dropout mask from the
  // stream; eval mode is deterministic and needs no stream.
  std::vector<double> next_token_dist(std::span<const double> prev, Mode mode,
                                      SeedStream* dropout = nullptr) const;
  // Same conditional, but for the start of a sequence (BOS context).
  std::vector<double> start_dist(Mode mode,
                                 SeedStream* dropout = nullptr) const;

  // V x V matrix whose row i is next_token_dist(one_hot(i), eval); includes
  // the EOS row (metrics exclude it downstream).
  Tensor extract_transition_matrix() const;

  // log Q(x) = log q(x_1|BOS) + sum_t log q(x_t|x_{t-1}), eval mode. The
  // per-step probabilities feed the perplexity metric and self-weighted
  // losses.
  ModelSequenceScore seq_log_prob(const TokenSequence& seq) const;

  std::vector<const Tensor*> parameters() const;
  std::vector<Tensor*> parameters();

 private:
  std::vector<double> forward_from_embedding_(const std::vector<double>& e,
                                              Mode mode,
                                              SeedStream* dropout) const;

  ModelConfig config_;
};

// Eval-mode conditionals frozen into plain tables. Because the model is a
// bigram, V+1 forward passes cover every context; scoring thousands of
// validation sequences then costs table lookups instead of matmuls.
// Produces exactly the same numbers as seq_log_prob.
class ModelScorer {
 public:
  explicit ModelScorer(const NeuralBigramLM& model);

  const std::vector<double>& start() const { return start_; }
  const Tensor& transition() const { return transition_; }
  std::size_t vocab_size() const { return vocab_size_; }

  ModelSequenceScore seq_log_prob(const TokenSequence& seq) const;

 private:
  std::size_t vocab_size_;
  std::vector<double> start_;
  Tensor transition_;
};

// The model's parameters registered as leaves of a tape, plus the batched
// differentiable forward pass used by every training objective.
struct TapeModel {
  NodeId E = 0, W1 = 0, b1 = 0, W2 = 0, b2 = 0;
  const NeuralBigramLM* model = nullptr;

  static TapeModel attach(Tape& tape, const NeuralBigramLM& model);

  // rows: N x (V+1) node of previous-token vectors (column V = BOS).
  // Returns an N x V node of next-token distributions.
  NodeId forward_rows(Tape& tape, NodeId rows, Mode mode,
                      SeedStream* dropout = nullptr) const;

  // Same forward pass, stopping at the pre-softmax logits. Rollouts build
  // their sampling and log-probability nodes from logits so that deeply
  // zero-forced tokens (whose softmax probability underflows to 0) still
  // produce finite log values.
  NodeId forward_rows_logits(Tape& tape, NodeId rows, Mode mode,
                             SeedStream* dropout = nullptr) const;

  // Gradients of {E, W1, b1, W2, b2} after tape.backward().
  std::vector<Tensor> parameter_grads(const Tape& tape) const;
};

// Checkpoint artifact: best parameters plus selection bookkeeping.
struct Checkpoint {
  NeuralBigramLM model;
  std::size_t epoch = 0;   // 1-based epoch the parameters come from
  double val_loss = 0.0;

  static Checkpoint load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string to_json_string() const;
  static Checkpoint from_json_string(std::string_view text);
};

}  // namespace mixce
