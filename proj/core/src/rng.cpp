#include "mixce/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mixce {
namespace {

// splitmix64 output mixer (Steele, Lea, Flood 2014). Good enough avalanche
// that consecutive or related seeds yield unrelated streams.
std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t hash_label(std::string_view label) {
  // FNV-1a, then one mixing round to spread short labels.
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return mix64(h);
}

std::uint64_t combine(std::uint64_t seed, std::uint64_t salt) {
  return mix64(seed ^ (salt + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2)));
}

}  // namespace

SeedStream::SeedStream(std::uint64_t seed) : seed_(seed), state_(seed) {}

SeedStream SeedStream::derive(std::string_view label) const {
  return SeedStream(combine(seed_, hash_label(label)));
}

SeedStream SeedStream::derive(std::uint64_t index) const {
  return SeedStream(combine(seed_, mix64(index ^ 0xa0761d6478bd642full)));
}

std::uint64_t SeedStream::next_u64() {
  state_ += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double SeedStream::uniform() {
  // 53 top bits -> [0, 1) on the dyadic grid.
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeedStream::uniform_open() {
  // Center each cell so 0 and 1 are both unreachable: (k + 0.5) / 2^53.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double SeedStream::gaussian() {
  double u1 = uniform_open();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

double SeedStream::gumbel() { return -std::log(-std::log(uniform_open())); }

double SeedStream::gamma(double alpha) {
  if (!(alpha > 0.0)) {
    throw std::invalid_argument("gamma: alpha must be > 0");
  }
  if (alpha < 1.0) {
    // Boost to alpha+1 and scale back: Gamma(a) = Gamma(a+1) * U^{1/a}.
    double u = uniform_open();
    return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = gaussian();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform_open();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> SeedStream::dirichlet(double alpha, std::size_t n) {
  if (n == 0) {
    throw std::invalid_argument("dirichlet: need at least one category");
  }
  std::vector<double> out(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = gamma(alpha);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

}  // namespace mixce
