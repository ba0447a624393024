#include "mixce/metrics.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "json_io.hpp"

namespace mixce {

namespace {

std::uint64_t bounded_u64(SeedStream& stream, std::uint64_t n) {
  // Rejection sampling so every residue is exactly equally likely.
  const std::uint64_t rem = ((~std::uint64_t{0}) % n + 1) % n;
  for (;;) {
    const std::uint64_t u = stream.next_u64();
    if (rem == 0 || u <= ~std::uint64_t{0} - rem) return u % n;
  }
}

void require_row_stochastic_pair(const Tensor& gold, const Tensor& learned,
                                 const char* who) {
  if (gold.rank() != 2 || !gold.same_shape(learned)) {
    throw std::invalid_argument(std::string(who) + ": shape mismatch");
  }
  if (gold.rows() != gold.cols() || gold.rows() < 2) {
    throw std::invalid_argument(std::string(who) +
                                ": expected square transition matrices");
  }
  const std::size_t v = gold.rows();
  for (std::size_t i = 0; i + 1 < v; ++i) {  // EOS row exempt
    double gs = 0.0, ls = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      gs += gold.at(i, j);
      ls += learned.at(i, j);
    }
    if (std::abs(gs - 1.0) > 1e-6 || std::abs(ls - 1.0) > 1e-6) {
      throw std::invalid_argument(std::string(who) +
                                  ": rows must be normalized");
    }
  }
}

// Content tokens of a text: the terminal EOS marker is bookkeeping, not
// text, so sampling-based text metrics ignore it.
std::span<const std::int32_t> content_tokens(const TokenSequence& seq) {
  std::span<const std::int32_t> toks(seq.tokens);
  if (seq.terminated && !toks.empty()) toks = toks.subspan(0, toks.size() - 1);
  return toks;
}

}  // namespace

double avg_js(const Tensor& gold, const Tensor& learned) {
  require_row_stochastic_pair(gold, learned, "avg_js");
  const std::size_t v = gold.rows();
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < v; ++i) {
    double js = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double p = gold.at(i, j);
      const double q = learned.at(i, j);
      const double m = 0.5 * (p + q);
      if (p > 0.0) js += 0.5 * p * std::log(p / m);
      if (q > 0.0) js += 0.5 * q * std::log(q / m);
    }
    total += js;
  }
  return total / static_cast<double>(v - 1);
}

double avg_0s(const Tensor& gold, const Tensor& learned, bool* degenerate) {
  require_row_stochastic_pair(gold, learned, "avg_0s");
  const std::size_t v = gold.rows();
  double total = 0.0;
  std::size_t zeros = 0;
  for (std::size_t i = 0; i + 1 < v; ++i) {
    for (std::size_t j = 0; j < v; ++j) {
      if (gold.at(i, j) == 0.0) {
        total += learned.at(i, j);
        ++zeros;
      }
    }
  }
  if (degenerate != nullptr) *degenerate = zeros == 0;
  return zeros == 0 ? 0.0 : total / static_cast<double>(zeros);
}

double perplexity(std::span<const double> per_token_log_probs) {
  if (per_token_log_probs.empty()) {
    throw std::invalid_argument("perplexity: empty input");
  }
  double total = 0.0;
  for (double lp : per_token_log_probs) total += lp;
  return std::exp(total *
                  (-1.0 / static_cast<double>(per_token_log_probs.size())));
}

double ngram_diversity(std::span<const TokenSequence> texts,
                       std::size_t* skipped_out) {
  if (texts.empty()) {
    throw std::invalid_argument("ngram_diversity: no texts");
  }
  double total = 0.0;
  std::size_t used = 0, skipped = 0;
  for (const TokenSequence& text : texts) {
    const auto toks = content_tokens(text);
    if (toks.size() < 4) {
      ++skipped;
      continue;
    }
    double fractions = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
      std::set<std::vector<std::int32_t>> unique;
      const std::size_t count = toks.size() - n + 1;
      for (std::size_t s = 0; s < count; ++s) {
        unique.emplace(toks.begin() + s, toks.begin() + s + n);
      }
      fractions +=
          static_cast<double>(unique.size()) / static_cast<double>(count);
    }
    total += fractions / 4.0;
    ++used;
  }
  if (skipped_out != nullptr) *skipped_out = skipped;
  if (used == 0) {
    throw std::invalid_argument(
        "ngram_diversity: every text is shorter than 4 tokens");
  }
  return total / static_cast<double>(used);
}

std::vector<std::vector<std::int32_t>> fragment_sample(
    std::span<const TokenSequence> texts, std::size_t len, std::size_t count,
    SeedStream& stream) {
  if (len == 0) {
    throw std::invalid_argument("fragment_sample: fragment length must be >= 1");
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (content_tokens(texts[i]).size() >= len) eligible.push_back(i);
  }
  if (eligible.empty()) {
    throw std::invalid_argument(
        "fragment_sample: no text has enough tokens for the fragment length");
  }
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t which =
        eligible[static_cast<std::size_t>(bounded_u64(stream, eligible.size()))];
    const auto toks = content_tokens(texts[which]);
    const std::size_t starts = toks.size() - len + 1;
    const auto s = static_cast<std::size_t>(bounded_u64(stream, starts));
    out.emplace_back(toks.begin() + s, toks.begin() + s + len);
  }
  return out;
}

std::string MetricReport::to_json_string() const {
  detail::json j;
  j["avg_js"] = avg_js;
  j["avg_0s"] = avg_0s;
  j["perplexity"] = perplexity.has_value() ? detail::json(*perplexity)
                                           : detail::json(nullptr);
  j["diversity"] = diversity.has_value() ? detail::json(*diversity)
                                         : detail::json(nullptr);
  detail::json meta;
  meta["objective"] = objective;
  meta["eta"] = eta;
  meta["seed"] = seed;
  meta["vocab_size"] = vocab_size;
  meta["init"] = init;
  j["meta"] = meta;
  return j.dump(2) + "\n";
}

MetricReport MetricReport::from_json_string(std::string_view text) {
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const detail::json::parse_error& e) {
    throw std::runtime_error(std::string("metric report: ") + e.what());
  }
  detail::reject_unknown_keys(
      j, {"avg_js", "avg_0s", "perplexity", "diversity", "meta"},
      "metric report");
  MetricReport r;
  r.avg_js = j.at("avg_js").get<double>();
  r.avg_0s = j.at("avg_0s").get<double>();
  if (!j.at("perplexity").is_null()) {
    r.perplexity = j.at("perplexity").get<double>();
  }
  if (!j.at("diversity").is_null()) {
    r.diversity = j.at("diversity").get<double>();
  }
  const detail::json& meta = j.at("meta");
  detail::reject_unknown_keys(
      meta, {"objective", "eta", "seed", "vocab_size", "init"},
      "metric report meta");
  r.objective = meta.at("objective").get<std::string>();
  r.eta = meta.at("eta").get<double>();
  r.seed = meta.at("seed").get<std::uint64_t>();
  r.vocab_size = meta.at("vocab_size").get<std::size_t>();
  r.init = meta.at("init").get<std::string>();
  return r;
}

}  // namespace mixce
