#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mixce/rng.hpp"
#include "mixce/tensor.hpp"

namespace mixce {

// Additive floor inside every log so gold-zero transitions score as a large
// negative but finite value: log(1e-30) ~= -69.08.
inline constexpr double kLogFloor = 1e-30;

struct TokenSequence {
  std::vector<std::int32_t> tokens;
  bool terminated = false;  // true iff the final token is EOS
};

// Throws if the sequence violates the basic shape rules: token ids in
// [0, vocab_size), EOS at most once and only final, `terminated` consistent
// with the final token.
void validate_sequence(const TokenSequence& seq, std::size_t vocab_size,
                       std::int32_t eos_id);

struct SequenceScore {
  double log_prob = 0.0;
  std::vector<double> per_token;  // one natural-log term per token
};

// Ground-truth bigram distribution: start distribution pi over V tokens and
// a V x V transition matrix whose last row (EOS) is all zeros — nothing
// follows EOS. Immutable after construction; safe to share across threads.
class BigramWorld {
 public:
  // Dirichlet(alpha) rows with exactly round(zero_frac * V) entries zeroed
  // per row; the EOS column is never zeroed so every token keeps a direct
  // exit, and pi is uniform over non-EOS tokens.
  static BigramWorld init_random(std::size_t vocab_size, double zero_frac,
                                 double alpha, SeedStream stream);

  // Rows are normalized bigram counts; an all-zero count row becomes a
  // one-hot on EOS so the chain still terminates from every state.
  static BigramWorld init_from_counts(const Tensor& counts);

  // Assemble from explicit parts (mostly for tests); validates shape,
  // row-stochasticity, and the zero EOS row, but not tightness.
  static BigramWorld from_parts(std::vector<double> pi, Tensor transition);

  std::size_t vocab_size() const { return vocab_size_; }
  std::int32_t eos_id() const { return static_cast<std::int32_t>(vocab_size_ - 1); }
  const std::vector<double>& start() const { return pi_; }
  const Tensor& transition() const { return m_; }

  TokenSequence sample_sequence(std::size_t max_len, SeedStream& stream) const;

  // log(pi[x1] + eps) + sum_t log(M[x_{t-1}, x_t] + eps). Truncated
  // sequences simply lack the final EOS factor. Never returns -inf.
  SequenceScore log_prob(const TokenSequence& seq,
                         double epsilon = kLogFloor) const;

  // True iff every token reachable from pi has a positive-probability path
  // to EOS (reachability on the support of M).
  bool check_tight() const;

  static BigramWorld load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string to_json_string() const;
  static BigramWorld from_json_string(std::string_view text);

 private:
  BigramWorld() = default;

  std::size_t vocab_size_ = 0;
  std::vector<double> pi_;
  Tensor m_;  // V x V row-major
};

}  // namespace mixce
