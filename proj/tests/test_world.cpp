#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "helpers.hpp"
#include "mixce/rng.hpp"
#include "mixce/world.hpp"

using mixce::BigramWorld;
using mixce::SeedStream;
using mixce::Tensor;
using mixce::TokenSequence;
using mixce::validate_sequence;

TEST_CASE("random init: sparsity pattern, stochasticity, EOS conventions") {
  const BigramWorld w = testutil::make_world(20, 0.5, 1);
  CHECK(w.vocab_size() == 20);
  CHECK(w.eos_id() == 19);
  const Tensor& m = w.transition();
  for (std::size_t i = 0; i + 1 < 20; ++i) {
    double total = 0.0;
    std::size_t zeros = 0;
    for (std::size_t j = 0; j < 20; ++j) {
      const double p = m.at(i, j);
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      total += p;
      if (p == 0.0) ++zeros;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(zeros == 10);               // exactly round(0.5 * 20)
    CHECK(m.at(i, 19) > 0.0);         // the exit to EOS survives zeroing
  }
  for (std::size_t j = 0; j < 20; ++j) CHECK(m.at(19, j) == 0.0);
  for (std::size_t i = 0; i + 1 < 20; ++i) {
    CHECK(w.start()[i] == doctest::Approx(1.0 / 19.0).epsilon(1e-12));
  }
  CHECK(w.start()[19] == 0.0);
  CHECK(w.check_tight());
}

TEST_CASE("random init: zero_frac 0 introduces no zeros") {
  const BigramWorld w = testutil::make_world(3, 0.0, 5);
  for (std::size_t i = 0; i + 1 < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(w.transition().at(i, j) > 0.0);
  }
}

TEST_CASE("random init is deterministic in the seed") {
  const BigramWorld a = testutil::make_world(20, 0.5, 7);
  const BigramWorld b = testutil::make_world(20, 0.5, 7);
  CHECK(a.to_json_string() == b.to_json_string());
  const BigramWorld c = testutil::make_world(20, 0.5, 8);
  CHECK(a.to_json_string() != c.to_json_string());
}

TEST_CASE("random init rejects bad arguments") {
  CHECK_THROWS_AS(BigramWorld::init_random(2, 0.0, 0.5, SeedStream(1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(BigramWorld::init_random(20, 1.0, 0.5, SeedStream(1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(BigramWorld::init_random(20, 0.5, 0.0, SeedStream(1)),
                  std::invalid_argument);
  // Would leave zero nonzero entries per row once EOS is protected.
  CHECK_THROWS_AS(BigramWorld::init_random(3, 0.9, 0.5, SeedStream(1)),
                  std::invalid_argument);
}

TEST_CASE("counts init normalizes rows and rescues dead rows via EOS") {
  Tensor counts = Tensor::zeros(4, 4);
  counts.at(0, 0) = 2;
  counts.at(0, 1) = 2;
  counts.at(0, 3) = 4;
  counts.at(2, 3) = 5;
  // row 1 all zero; row 3 is EOS and must stay zero
  const BigramWorld w = BigramWorld::init_from_counts(counts);
  const Tensor& m = w.transition();
  CHECK(m.at(0, 0) == doctest::Approx(0.25));
  CHECK(m.at(0, 1) == doctest::Approx(0.25));
  CHECK(m.at(0, 2) == 0.0);
  CHECK(m.at(0, 3) == doctest::Approx(0.5));
  CHECK(m.at(1, 3) == 1.0);  // dead row becomes a one-hot on EOS
  CHECK(m.at(2, 3) == 1.0);
  CHECK(w.check_tight());

  Tensor negative = Tensor::zeros(4, 4);
  negative.at(0, 1) = -1;
  CHECK_THROWS_AS(BigramWorld::init_from_counts(negative),
                  std::invalid_argument);
  CHECK_THROWS_AS(BigramWorld::init_from_counts(Tensor::zeros(4, 3)),
                  std::invalid_argument);
  Tensor eos_counts = Tensor::zeros(4, 4);
  eos_counts.at(3, 0) = 1;
  CHECK_THROWS_AS(BigramWorld::init_from_counts(eos_counts),
                  std::invalid_argument);
}

TEST_CASE("from_parts validates shape, stochasticity, and the EOS row") {
  Tensor good = Tensor::matrix(3, 3, {0.25, 0.25, 0.5,
                                      0.0, 0.5, 0.5,
                                      0.0, 0.0, 0.0});
  CHECK_NOTHROW(BigramWorld::from_parts({0.5, 0.5, 0.0}, good));

  Tensor short_row = good;
  short_row.at(0, 2) = 0.4;
  CHECK_THROWS_AS(BigramWorld::from_parts({0.5, 0.5, 0.0}, short_row),
                  std::invalid_argument);
  Tensor live_eos = good;
  live_eos.at(2, 0) = 1.0;
  CHECK_THROWS_AS(BigramWorld::from_parts({0.5, 0.5, 0.0}, live_eos),
                  std::invalid_argument);
  CHECK_THROWS_AS(BigramWorld::from_parts({0.7, 0.7, 0.0}, good),
                  std::invalid_argument);
}

TEST_CASE("check_tight is false when a reachable token cannot exit") {
  // Token 0 self-loops forever: reachable from pi, no path to EOS.
  Tensor trapped = Tensor::matrix(3, 3, {1.0, 0.0, 0.0,
                                         0.0, 0.5, 0.5,
                                         0.0, 0.0, 0.0});
  const BigramWorld w = BigramWorld::from_parts({0.5, 0.5, 0.0}, trapped);
  CHECK(!w.check_tight());
}

TEST_CASE("sampled sequences respect termination semantics") {
  const BigramWorld w = testutil::make_world(8, 0.1, 3);
  SeedStream stream(4);
  std::size_t terminated = 0, truncated = 0;
  for (int i = 0; i < 300; ++i) {
    const TokenSequence seq = w.sample_sequence(12, stream);
    CHECK(!seq.tokens.empty());
    CHECK(seq.tokens.size() <= 12);
    CHECK_NOTHROW(validate_sequence(seq, 8, w.eos_id()));
    if (seq.terminated) {
      CHECK(seq.tokens.back() == w.eos_id());
      ++terminated;
    } else {
      CHECK(seq.tokens.size() == 12);
      ++truncated;
    }
  }
  CHECK(terminated > 0);

  SeedStream a(9), b(9);
  const TokenSequence s1 = w.sample_sequence(12, a);
  const TokenSequence s2 = w.sample_sequence(12, b);
  CHECK(s1.tokens == s2.tokens);
}

TEST_CASE("sequence validation rejects malformed shapes") {
  CHECK_THROWS_AS(validate_sequence({{0, 3, 1}, false}, 4, 3),
                  std::invalid_argument);  // interior EOS
  CHECK_THROWS_AS(validate_sequence({{0, 5}, false}, 4, 3),
                  std::invalid_argument);  // out of range
  CHECK_THROWS_AS(validate_sequence({{0, 3}, false}, 4, 3),
                  std::invalid_argument);  // ends in EOS but not terminated
  CHECK_THROWS_AS(validate_sequence({{0, 1}, true}, 4, 3),
                  std::invalid_argument);  // terminated without EOS
  CHECK_NOTHROW(validate_sequence({{0, 1, 3}, true}, 4, 3));
}

TEST_CASE("log_prob is smoothed, exact, and never -inf") {
  Tensor m = Tensor::matrix(3, 3, {0.0, 0.5, 0.5,
                                   0.25, 0.25, 0.5,
                                   0.0, 0.0, 0.0});
  const BigramWorld w = BigramWorld::from_parts({0.5, 0.5, 0.0}, m);

  const mixce::SequenceScore terminated = w.log_prob({{0, 1, 2}, true});
  CHECK(terminated.per_token.size() == 3);
  CHECK(terminated.per_token[0] ==
        doctest::Approx(std::log(0.5 + 1e-30)));
  CHECK(terminated.log_prob ==
        doctest::Approx(std::log(0.5) + std::log(0.5) + std::log(0.5))
            .epsilon(1e-9));

  // A truncated sequence simply lacks the EOS factor.
  const mixce::SequenceScore truncated = w.log_prob({{0, 1}, false});
  CHECK(truncated.per_token.size() == 2);
  CHECK(truncated.log_prob ==
        doctest::Approx(std::log(0.5) + std::log(0.5)).epsilon(1e-9));

  // Impossible transition 0 -> 0 scores the floor, not -inf.
  const mixce::SequenceScore impossible = w.log_prob({{0, 0}, false});
  CHECK(std::isfinite(impossible.log_prob));
  CHECK(impossible.per_token[1] ==
        doctest::Approx(std::log(1e-30)).epsilon(1e-12));
  CHECK(impossible.per_token[1] == doctest::Approx(-69.0776).epsilon(1e-4));
}

TEST_CASE("world JSON round trip is exact") {
  const BigramWorld w = testutil::make_world(6, 0.1, 13);
  const std::string text = w.to_json_string();
  CHECK(text.find("\"mixce-world/1\"") != std::string::npos);
  CHECK(text.back() == '\n');
  const BigramWorld back = BigramWorld::from_json_string(text);
  CHECK(back.to_json_string() == text);

  testutil::TempDir tmp;
  const auto path = tmp.path / "w.json";
  w.save(path);
  const BigramWorld loaded = BigramWorld::load(path);
  CHECK(loaded.to_json_string() == text);
  CHECK(testutil::read_file(path) == text);

  CHECK_THROWS_AS(BigramWorld::from_json_string("{}"), std::runtime_error);
  CHECK_THROWS_AS(BigramWorld::from_json_string("not json"),
                  std::runtime_error);
}
