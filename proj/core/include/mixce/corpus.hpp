#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mixce/rng.hpp"
#include "mixce/tensor.hpp"
#include "mixce/world.hpp"

namespace mixce {

// A token-id corpus plus the provenance needed to interpret it. The file
// format is one sequence per line of space-separated decimal ids; a
// sequence that terminated carries its EOS id as the last token, a
// truncated one simply lacks it. A sidecar <path>.meta.json records
// vocab_size / eos_id / count / max_len / seed.
struct Dataset {
  std::vector<TokenSequence> sequences;
  std::size_t vocab_size = 0;
  std::int32_t eos_id = 0;
  std::size_t max_len = 0;
  std::uint64_t seed = 0;

  std::size_t total_tokens() const;
};

// Draws `count` sequences from the world (used by the data pipeline and
// tests; each draw advances the stream).
Dataset sample_dataset(const BigramWorld& world, std::size_t count,
                       std::size_t max_len, SeedStream& stream);

// counts[i][j] = number of adjacent (i, j) pairs across all sequences,
// including the pair into EOS for terminated sequences. The EOS row stays
// all zero because EOS is never followed by anything.
Tensor count_bigrams(const Dataset& dataset, std::size_t vocab_size);

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace mixce
