#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mixce/corpus.hpp"
#include "mixce/model.hpp"
#include "mixce/rng.hpp"
#include "mixce/world.hpp"

namespace testutil {

inline mixce::BigramWorld make_world(std::size_t vocab, double zero_frac,
                                     std::uint64_t seed) {
  return mixce::BigramWorld::init_random(vocab, zero_frac, 0.5,
                                         mixce::SeedStream(seed));
}

inline mixce::NeuralBigramLM make_model(std::size_t vocab, std::size_t hidden,
                                        std::uint64_t seed,
                                        double dropout = 0.0) {
  return mixce::NeuralBigramLM::init({vocab, hidden, dropout},
                                     mixce::SeedStream(seed));
}

inline std::vector<mixce::TokenSequence> sample_batch(
    const mixce::BigramWorld& world, std::size_t count, std::size_t max_len,
    std::uint64_t seed) {
  mixce::SeedStream stream(seed);
  std::vector<mixce::TokenSequence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(world.sample_sequence(max_len, stream));
  }
  return out;
}

inline mixce::Dataset make_dataset(const mixce::BigramWorld& world,
                                   std::size_t count, std::size_t max_len,
                                   std::uint64_t seed) {
  mixce::SeedStream stream(seed);
  return mixce::sample_dataset(world, count, max_len, stream);
}

// Fresh directory under the system temp root, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("mixce-test-" + std::to_string(rd()) + "-" +
            std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::string out;
  std::FILE* f = std::fopen(p.string().c_str(), "rb");
  if (f == nullptr) return out;
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof(buf), f)) > 0) {
    out.append(buf, got);
  }
  std::fclose(f);
  return out;
}

inline void write_file(const std::filesystem::path& p,
                       const std::string& text) {
  std::FILE* f = std::fopen(p.string().c_str(), "wb");
  if (f == nullptr) return;
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

}  // namespace testutil
