#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixce/rng.hpp"
#include "mixce/tensor.hpp"
#include "mixce/world.hpp"

namespace mixce {

// Mean row-wise Jensen-Shannon divergence (natural log, mixture (p+q)/2)
// between two row-stochastic V x V matrices, skipping exactly the EOS row
// (the last one). 0 <= result <= ln 2.
double avg_js(const Tensor& gold, const Tensor& learned);

// Mean of the learned entries at every position where the gold entry is
// exactly zero, EOS row excluded — the mass the model leaks onto impossible
// transitions. A gold matrix with no zeros yields 0 and sets *degenerate.
double avg_0s(const Tensor& gold, const Tensor& learned,
              bool* degenerate = nullptr);

// exp of the negative mean of natural-log token probabilities.
double perplexity(std::span<const double> per_token_log_probs);

// Mean over texts of the average unique/total n-gram fraction for
// n = 1..4, over content tokens (a terminal EOS is not text). Texts with
// fewer than 4 content tokens are skipped and counted in *skipped_out;
// throws if every text is that short.
double ngram_diversity(std::span<const TokenSequence> texts,
                       std::size_t* skipped_out = nullptr);

// `count` fragments of exactly `len` content tokens, each drawn by first
// picking a text with at least `len` content tokens uniformly, then a start
// offset uniformly (both with replacement).
std::vector<std::vector<std::int32_t>> fragment_sample(
    std::span<const TokenSequence> texts, std::size_t len, std::size_t count,
    SeedStream& stream);

struct MetricReport {
  double avg_js = 0.0;
  double avg_0s = 0.0;
  std::optional<double> perplexity;
  std::optional<double> diversity;
  // Provenance of the run the metrics describe.
  std::string objective;
  double eta = 0.0;
  std::uint64_t seed = 0;
  std::size_t vocab_size = 0;
  std::string init;  // how the gold world was initialized

  std::string to_json_string() const;
  static MetricReport from_json_string(std::string_view text);
};

}  // namespace mixce
