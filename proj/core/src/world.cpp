#include "mixce/world.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>

#include "json_io.hpp"
#include "mixce/sampling.hpp"

namespace mixce {
namespace {

constexpr double kRowSumTol = 1e-9;

void validate_parts(const std::vector<double>& pi, const Tensor& m) {
  const std::size_t v = pi.size();
  if (v < 2) {
    throw std::invalid_argument("BigramWorld: vocab size must be at least 2");
  }
  if (m.rank() != 2 || m.rows() != v || m.cols() != v) {
    throw std::invalid_argument("BigramWorld: transition matrix must be VxV");
  }
  double pi_sum = 0.0;
  for (double p : pi) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument("BigramWorld: pi entries must be in [0,1]");
    }
    pi_sum += p;
  }
  if (std::abs(pi_sum - 1.0) > kRowSumTol) {
    throw std::invalid_argument("BigramWorld: pi must sum to 1");
  }
  const std::size_t eos = v - 1;
  for (std::size_t i = 0; i < v; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double p = m.at(i, j);
      if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument(
            "BigramWorld: transition entries must be in [0,1]");
      }
      row_sum += p;
    }
    if (i == eos) {
      if (row_sum != 0.0) {
        throw std::invalid_argument("BigramWorld: EOS row must be all zeros");
      }
    } else if (std::abs(row_sum - 1.0) > kRowSumTol) {
      throw std::invalid_argument("BigramWorld: row " + std::to_string(i) +
                                  " does not sum to 1");
    }
  }
}

// Unbiased integer draw in [0, n) by rejection.
std::uint64_t bounded_u64(SeedStream& stream, std::uint64_t n) {
  const std::uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
  for (;;) {
    const std::uint64_t r = stream.next_u64();
    if (r >= threshold) return r % n;
  }
}

}  // namespace

void validate_sequence(const TokenSequence& seq, std::size_t vocab_size,
                       std::int32_t eos_id) {
  for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
    const std::int32_t tok = seq.tokens[t];
    if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_size) {
      throw std::invalid_argument("sequence token out of range at position " +
                                  std::to_string(t));
    }
    if (tok == eos_id && t + 1 != seq.tokens.size()) {
      throw std::invalid_argument("interior EOS at position " +
                                  std::to_string(t));
    }
  }
  const bool ends_with_eos =
      !seq.tokens.empty() && seq.tokens.back() == eos_id;
  if (seq.terminated != ends_with_eos) {
    throw std::invalid_argument(
        "sequence terminated flag inconsistent with final token");
  }
}

BigramWorld BigramWorld::init_random(std::size_t vocab_size, double zero_frac,
                                     double alpha, SeedStream stream) {
  if (vocab_size < 3) {
    throw std::invalid_argument("init_random: vocab size must be >= 3");
  }
  if (!(zero_frac >= 0.0 && zero_frac < 1.0)) {
    throw std::invalid_argument("init_random: zero_frac must be in [0, 1)");
  }
  if (!(alpha > 0.0)) {
    throw std::invalid_argument("init_random: alpha must be > 0");
  }
  const std::size_t v = vocab_size;
  const std::size_t eos = v - 1;
  const std::size_t zeros_per_row =
      static_cast<std::size_t>(std::llround(zero_frac * static_cast<double>(v)));
  // Zeros land only on non-EOS columns (every token keeps a live exit to
  // EOS), so at most V-1 positions are available per row.
  if (zeros_per_row > v - 1) {
    throw std::invalid_argument(
        "init_random: zero_frac would zero out an entire row");
  }

  BigramWorld world;
  world.vocab_size_ = v;
  world.m_ = Tensor::zeros(v, v);
  SeedStream rows = stream.derive("rows");
  for (std::size_t i = 0; i < eos; ++i) {
    SeedStream row_stream = rows.derive(i);
    std::vector<double> row = row_stream.dirichlet(alpha, v);
    if (zeros_per_row > 0) {
      // Partial Fisher-Yates over the V-1 non-EOS columns.
      std::vector<std::size_t> cols(v - 1);
      for (std::size_t j = 0; j < v - 1; ++j) cols[j] = j;
      for (std::size_t k = 0; k < zeros_per_row; ++k) {
        const std::size_t pick =
            k + static_cast<std::size_t>(bounded_u64(row_stream, v - 1 - k));
        std::swap(cols[k], cols[pick]);
        row[cols[k]] = 0.0;
      }
      double total = 0.0;
      for (double p : row) total += p;
      for (double& p : row) p /= total;
    }
    for (std::size_t j = 0; j < v; ++j) world.m_.at(i, j) = row[j];
  }
  world.pi_.assign(v, 0.0);
  for (std::size_t i = 0; i < eos; ++i) {
    world.pi_[i] = 1.0 / static_cast<double>(v - 1);
  }
  return world;
}

BigramWorld BigramWorld::init_from_counts(const Tensor& counts) {
  if (counts.rank() != 2 || counts.rows() != counts.cols()) {
    throw std::invalid_argument("init_from_counts: counts must be square");
  }
  const std::size_t v = counts.rows();
  if (v < 3) {
    throw std::invalid_argument("init_from_counts: vocab size must be >= 3");
  }
  const std::size_t eos = v - 1;
  for (std::size_t i = 0; i < v; ++i) {
    for (std::size_t j = 0; j < v; ++j) {
      const double c = counts.at(i, j);
      if (c < 0.0 || c != std::floor(c)) {
        throw std::invalid_argument(
            "init_from_counts: counts must be nonnegative integers");
      }
      if (i == eos && c != 0.0) {
        throw std::invalid_argument(
            "init_from_counts: EOS row must have zero counts");
      }
    }
  }

  BigramWorld world;
  world.vocab_size_ = v;
  world.m_ = Tensor::zeros(v, v);
  for (std::size_t i = 0; i < eos; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < v; ++j) total += counts.at(i, j);
    if (total == 0.0) {
      // Unseen token: send it straight to EOS so the chain stays tight.
      world.m_.at(i, eos) = 1.0;
    } else {
      for (std::size_t j = 0; j < v; ++j) {
        world.m_.at(i, j) = counts.at(i, j) / total;
      }
    }
  }
  world.pi_.assign(v, 0.0);
  for (std::size_t i = 0; i < eos; ++i) {
    world.pi_[i] = 1.0 / static_cast<double>(v - 1);
  }
  if (!world.check_tight()) {
    throw std::invalid_argument(
        "init_from_counts: counted transitions trap probability mass away "
        "from EOS");
  }
  return world;
}

BigramWorld BigramWorld::from_parts(std::vector<double> pi, Tensor transition) {
  validate_parts(pi, transition);
  BigramWorld world;
  world.vocab_size_ = pi.size();
  world.pi_ = std::move(pi);
  world.m_ = std::move(transition);
  return world;
}

TokenSequence BigramWorld::sample_sequence(std::size_t max_len,
                                           SeedStream& stream) const {
  if (max_len == 0) {
    throw std::invalid_argument("sample_sequence: max_len must be >= 1");
  }
  TokenSequence seq;
  const std::int32_t eos = eos_id();
  std::int32_t prev = -1;
  while (seq.tokens.size() < max_len) {
    std::span<const double> dist;
    if (prev < 0) {
      dist = pi_;
    } else {
      dist = std::span<const double>(
          m_.values.data() + static_cast<std::size_t>(prev) * vocab_size_,
          vocab_size_);
    }
    const auto tok = static_cast<std::int32_t>(categorical_sample(dist, stream));
    seq.tokens.push_back(tok);
    if (tok == eos) {
      seq.terminated = true;
      return seq;
    }
    prev = tok;
  }
  seq.terminated = false;
  return seq;
}

SequenceScore BigramWorld::log_prob(const TokenSequence& seq,
                                    double epsilon) const {
  validate_sequence(seq, vocab_size_, eos_id());
  SequenceScore score;
  score.per_token.reserve(seq.tokens.size());
  std::int32_t prev = -1;
  for (const std::int32_t tok : seq.tokens) {
    const double p =
        prev < 0 ? pi_[static_cast<std::size_t>(tok)]
                 : m_.at(static_cast<std::size_t>(prev),
                         static_cast<std::size_t>(tok));
    const double term = std::log(p + epsilon);
    score.per_token.push_back(term);
    score.log_prob += term;
    prev = tok;
  }
  return score;
}

bool BigramWorld::check_tight() const {
  const std::size_t v = vocab_size_;
  const std::size_t eos = v - 1;

  // can_exit[i]: a positive-probability path i -> ... -> EOS exists.
  // Computed as reachability from EOS along reversed support edges.
  std::vector<char> can_exit(v, 0);
  can_exit[eos] = 1;
  std::deque<std::size_t> queue{eos};
  while (!queue.empty()) {
    const std::size_t j = queue.front();
    queue.pop_front();
    for (std::size_t i = 0; i < eos; ++i) {
      if (!can_exit[i] && m_.at(i, j) > 0.0) {
        can_exit[i] = 1;
        queue.push_back(i);
      }
    }
  }

  // Every token reachable from pi must be able to exit.
  std::vector<char> reached(v, 0);
  std::deque<std::size_t> frontier;
  for (std::size_t i = 0; i < v; ++i) {
    if (pi_[i] > 0.0 && !reached[i]) {
      reached[i] = 1;
      frontier.push_back(i);
    }
  }
  while (!frontier.empty()) {
    const std::size_t i = frontier.front();
    frontier.pop_front();
    if (i == eos) continue;
    if (!can_exit[i]) return false;
    for (std::size_t j = 0; j < v; ++j) {
      if (m_.at(i, j) > 0.0 && !reached[j]) {
        reached[j] = 1;
        frontier.push_back(j);
      }
    }
  }
  return true;
}

std::string BigramWorld::to_json_string() const {
  detail::json j;
  j["format"] = "mixce-world/1";
  j["vocab_size"] = vocab_size_;
  j["eos_id"] = eos_id();
  j["pi"] = pi_;
  detail::json rows = detail::json::array();
  for (std::size_t i = 0; i < vocab_size_; ++i) {
    detail::json row = detail::json::array();
    for (std::size_t k = 0; k < vocab_size_; ++k) row.push_back(m_.at(i, k));
    rows.push_back(std::move(row));
  }
  j["M"] = std::move(rows);
  return j.dump(2) + "\n";
}

BigramWorld BigramWorld::from_json_string(std::string_view text) {
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const detail::json::parse_error& e) {
    throw std::runtime_error(std::string("world: invalid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != "mixce-world/1") {
    throw std::runtime_error("world: missing or unsupported format marker");
  }
  detail::reject_unknown_keys(j, {"format", "vocab_size", "eos_id", "pi", "M"},
                              "world");
  const auto v = j.at("vocab_size").get<std::size_t>();
  const auto eos = j.at("eos_id").get<std::int64_t>();
  if (eos != static_cast<std::int64_t>(v) - 1) {
    throw std::runtime_error("world: eos_id must equal vocab_size - 1");
  }
  auto pi = j.at("pi").get<std::vector<double>>();
  const auto& rows = j.at("M");
  if (!rows.is_array() || rows.size() != v) {
    throw std::runtime_error("world: M must have vocab_size rows");
  }
  Tensor m = Tensor::zeros(v, v);
  for (std::size_t i = 0; i < v; ++i) {
    const auto row = rows[i].get<std::vector<double>>();
    if (row.size() != v) {
      throw std::runtime_error("world: M row " + std::to_string(i) +
                               " has wrong length");
    }
    for (std::size_t k = 0; k < v; ++k) m.at(i, k) = row[k];
  }
  return from_parts(std::move(pi), std::move(m));
}

BigramWorld BigramWorld::load(const std::filesystem::path& path) {
  try {
    return from_json_string(detail::read_text_file(path));
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void BigramWorld::save(const std::filesystem::path& path) const {
  detail::write_text_file(path, to_json_string());
}

}  // namespace mixce
