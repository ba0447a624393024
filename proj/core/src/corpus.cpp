#include "mixce/corpus.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json_io.hpp"

namespace mixce {

std::size_t Dataset::total_tokens() const {
  std::size_t n = 0;
  for (const TokenSequence& seq : sequences) n += seq.tokens.size();
  return n;
}

Dataset sample_dataset(const BigramWorld& world, std::size_t count,
                       std::size_t max_len, SeedStream& stream) {
  Dataset ds;
  ds.vocab_size = world.vocab_size();
  ds.eos_id = world.eos_id();
  ds.max_len = max_len;
  ds.seed = stream.seed();
  ds.sequences.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ds.sequences.push_back(world.sample_sequence(max_len, stream));
  }
  return ds;
}

Tensor count_bigrams(const Dataset& dataset, std::size_t vocab_size) {
  Tensor counts = Tensor::zeros(vocab_size, vocab_size);
  const auto eos = static_cast<std::int32_t>(vocab_size - 1);
  for (const TokenSequence& seq : dataset.sequences) {
    validate_sequence(seq, vocab_size, eos);
    for (std::size_t t = 1; t < seq.tokens.size(); ++t) {
      counts.at(static_cast<std::size_t>(seq.tokens[t - 1]),
                static_cast<std::size_t>(seq.tokens[t])) += 1.0;
    }
  }
  return counts;
}

Dataset load_dataset(const std::filesystem::path& path) {
  const std::filesystem::path meta_path = path.string() + ".meta.json";
  const detail::json meta = detail::read_json_file(meta_path);
  detail::reject_unknown_keys(
      meta, {"vocab_size", "eos_id", "count", "max_len", "seed"},
      meta_path.string());

  Dataset ds;
  ds.vocab_size = meta.at("vocab_size").get<std::size_t>();
  ds.eos_id = meta.at("eos_id").get<std::int32_t>();
  ds.max_len = meta.at("max_len").get<std::size_t>();
  ds.seed = meta.at("seed").get<std::uint64_t>();
  const auto expected_count = meta.at("count").get<std::size_t>();
  if (ds.vocab_size < 2 ||
      ds.eos_id != static_cast<std::int32_t>(ds.vocab_size) - 1) {
    throw std::runtime_error(meta_path.string() +
                             ": eos_id must equal vocab_size - 1");
  }

  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open dataset: " + path.string());
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    TokenSequence seq;
    const char* cursor = line.data();
    const char* end = line.data() + line.size();
    while (cursor < end) {
      while (cursor < end && *cursor == ' ') ++cursor;
      if (cursor == end) break;
      std::int32_t tok = 0;
      auto [next, ec] = std::from_chars(cursor, end, tok);
      if (ec != std::errc() || (next < end && *next != ' ')) {
        throw std::runtime_error(path.string() + ":" +
                                 std::to_string(line_no) +
                                 ": malformed token");
      }
      cursor = next;
      seq.tokens.push_back(tok);
    }
    if (seq.tokens.empty()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": empty sequence line");
    }
    seq.terminated = seq.tokens.back() == ds.eos_id;
    try {
      validate_sequence(seq, ds.vocab_size, ds.eos_id);
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": " + e.what());
    }
    if (seq.tokens.size() > ds.max_len) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": sequence longer than declared max_len");
    }
    ds.sequences.push_back(std::move(seq));
  }
  if (ds.sequences.size() != expected_count) {
    throw std::runtime_error(
        path.string() + ": sequence count " +
        std::to_string(ds.sequences.size()) + " does not match metadata (" +
        std::to_string(expected_count) + ")");
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  for (const TokenSequence& seq : dataset.sequences) {
    validate_sequence(seq, dataset.vocab_size, dataset.eos_id);
  }
  std::ostringstream body;
  for (const TokenSequence& seq : dataset.sequences) {
    for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
      if (t > 0) body << ' ';
      body << seq.tokens[t];
    }
    body << '\n';
  }
  detail::write_text_file(path, body.str());

  detail::json meta;
  meta["vocab_size"] = dataset.vocab_size;
  meta["eos_id"] = dataset.eos_id;
  meta["count"] = dataset.sequences.size();
  meta["max_len"] = dataset.max_len;
  meta["seed"] = dataset.seed;
  detail::write_text_file(path.string() + ".meta.json", meta.dump(2) + "\n");
}

}  // namespace mixce
