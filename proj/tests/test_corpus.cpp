#include <stdexcept>

#include "doctest.h"
#include "helpers.hpp"
#include "mixce/corpus.hpp"

using mixce::count_bigrams;
using mixce::Dataset;
using mixce::load_dataset;
using mixce::sample_dataset;
using mixce::save_dataset;
using mixce::SeedStream;
using mixce::Tensor;
using mixce::TokenSequence;

TEST_CASE("sampled datasets carry exact provenance") {
  const mixce::BigramWorld w = testutil::make_world(6, 0.1, 21);
  SeedStream stream(31);
  const Dataset ds = sample_dataset(w, 40, 15, stream);
  CHECK(ds.sequences.size() == 40);
  CHECK(ds.vocab_size == 6);
  CHECK(ds.eos_id == 5);
  CHECK(ds.max_len == 15);
  CHECK(ds.seed == 31);
  std::size_t tokens = 0;
  for (const TokenSequence& seq : ds.sequences) {
    CHECK_NOTHROW(mixce::validate_sequence(seq, 6, 5));
    CHECK(seq.tokens.size() <= 15);
    tokens += seq.tokens.size();
  }
  CHECK(ds.total_tokens() == tokens);
}

TEST_CASE("bigram counts include the EOS pair and keep the EOS row empty") {
  Dataset ds;
  ds.vocab_size = 3;
  ds.eos_id = 2;
  ds.sequences = {{{0, 1, 2}, true}, {{1, 0}, false}, {{1, 2}, true}};
  const Tensor counts = count_bigrams(ds, 3);
  CHECK(counts.at(0, 1) == 1.0);
  CHECK(counts.at(1, 2) == 2.0);  // both terminated sequences step into EOS
  CHECK(counts.at(1, 0) == 1.0);
  CHECK(counts.at(0, 0) == 0.0);
  for (std::size_t j = 0; j < 3; ++j) CHECK(counts.at(2, j) == 0.0);
}

TEST_CASE("dataset files round trip exactly") {
  const mixce::BigramWorld w = testutil::make_world(5, 0.0, 2);
  SeedStream stream(77);
  const Dataset ds = sample_dataset(w, 25, 10, stream);

  testutil::TempDir tmp;
  const auto path = tmp.path / "train.txt";
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  CHECK(back.sequences.size() == ds.sequences.size());
  CHECK(back.vocab_size == ds.vocab_size);
  CHECK(back.eos_id == ds.eos_id);
  CHECK(back.max_len == ds.max_len);
  CHECK(back.seed == ds.seed);
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    CHECK(back.sequences[i].tokens == ds.sequences[i].tokens);
    CHECK(back.sequences[i].terminated == ds.sequences[i].terminated);
  }

  // Re-saving the loaded dataset reproduces both files byte for byte.
  const auto path2 = tmp.path / "again.txt";
  save_dataset(back, path2);
  CHECK(testutil::read_file(path2) == testutil::read_file(path));
  CHECK(testutil::read_file(tmp.path / "again.txt.meta.json") ==
        testutil::read_file(tmp.path / "train.txt.meta.json"));

  // One line of space-separated ids per sequence.
  const std::string text = testutil::read_file(path);
  std::size_t lines = 0;
  for (char c : text) {
    if (c == '\n') ++lines;
  }
  CHECK(lines == 25);
}

TEST_CASE("dataset loading rejects malformed files") {
  testutil::TempDir tmp;
  CHECK_THROWS_AS(load_dataset(tmp.path / "missing.txt"), std::runtime_error);

  const mixce::BigramWorld w = testutil::make_world(4, 0.0, 3);
  SeedStream stream(5);
  const Dataset ds = sample_dataset(w, 4, 8, stream);
  const auto path = tmp.path / "d.txt";
  save_dataset(ds, path);

  // Corrupt one token past the vocabulary range.
  std::string text = testutil::read_file(path);
  text.insert(0, "9 ");
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
  CHECK_THROWS_AS(load_dataset(path), std::runtime_error);
}
