#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace mixce {

// Deterministic splitmix64-based random stream. A SeedStream is a cheap
// value type: copying one replays the exact same draw sequence, which is
// what lets validation rollouts reuse a fixed stream every epoch.
//
// Independent consumers (shuffling, dropout, Gumbel noise, ...) should not
// share a stream; they derive their own via derive("label") or
// derive(index). Derivation depends only on the stream's identity (its
// seed), never on how many draws were made, so the substream layout of a
// program is stable even when some code path consumes more randomness.
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t seed);

  // Named / indexed substreams.
  SeedStream derive(std::string_view label) const;
  SeedStream derive(std::uint64_t index) const;

  std::uint64_t next_u64();

  double uniform();       // [0, 1)
  double uniform_open();  // (0, 1), safe as a log() argument
  double gaussian();      // standard normal, Box-Muller
  double gumbel();        // standard Gumbel(0, 1): -log(-log(U))

  // Gamma(alpha, 1) via Marsaglia-Tsang squeeze; alpha > 0.
  double gamma(double alpha);

  // Symmetric Dirichlet(alpha) over n categories; alpha > 0, n >= 1.
  std::vector<double> dirichlet(double alpha, std::size_t n);

  // UniformRandomBitGenerator interface so <algorithm> shuffles work.
  using result_type = std::uint64_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~std::uint64_t{0}; }
  result_type operator()() { return next_u64(); }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;   // stream identity; derivation hashes this
  std::uint64_t state_;  // draw position; advanced by next_u64
};

}  // namespace mixce
