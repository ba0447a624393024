#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "mixce/rng.hpp"

using mixce::SeedStream;

TEST_CASE("same seed replays the same draws") {
  SeedStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("copies replay from the copy point") {
  SeedStream a(7);
  a.uniform();
  a.gaussian();
  SeedStream b = a;
  for (int i = 0; i < 50; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("derivation depends on identity, not draw position") {
  SeedStream fresh(9);
  SeedStream burned(9);
  for (int i = 0; i < 17; ++i) burned.next_u64();
  SeedStream da = fresh.derive("dropout");
  SeedStream db = burned.derive("dropout");
  for (int i = 0; i < 20; ++i) CHECK(da.next_u64() == db.next_u64());
}

TEST_CASE("distinct labels and indices give distinct streams") {
  SeedStream root(3);
  SeedStream a = root.derive("shuffle");
  SeedStream b = root.derive("gumbel");
  SeedStream c = root.derive(std::uint64_t{0});
  SeedStream d = root.derive(std::uint64_t{1});
  CHECK(a.next_u64() != b.next_u64());
  CHECK(c.next_u64() != d.next_u64());
}

TEST_CASE("uniform ranges") {
  SeedStream s(11);
  for (int i = 0; i < 10000; ++i) {
    const double u = s.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double v = s.uniform_open();
    CHECK(v > 0.0);
    CHECK(v < 1.0);
    CHECK(std::isfinite(std::log(v)));
  }
}

TEST_CASE("gaussian and gumbel moments") {
  SeedStream s(13);
  const int n = 40000;
  double gsum = 0.0, gsq = 0.0, msum = 0.0, msq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = s.gaussian();
    gsum += g;
    gsq += g * g;
    const double m = s.gumbel();
    msum += m;
    msq += m * m;
  }
  const double gmean = gsum / n, gvar = gsq / n - gmean * gmean;
  CHECK(std::abs(gmean) < 0.03);
  CHECK(std::abs(gvar - 1.0) < 0.05);
  // Gumbel(0, 1): mean = Euler-Mascheroni, variance = pi^2 / 6.
  const double mmean = msum / n, mvar = msq / n - mmean * mmean;
  CHECK(std::abs(mmean - 0.5772156649) < 0.03);
  CHECK(std::abs(mvar - 1.6449340668) < 0.08);
}

TEST_CASE("gamma moments and domain") {
  SeedStream s(17);
  for (const double alpha : {0.4, 2.5}) {
    const int n = 40000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = s.gamma(alpha);
      CHECK(x > 0.0);
      sum += x;
      sq += x * x;
    }
    const double mean = sum / n, var = sq / n - mean * mean;
    CHECK(std::abs(mean - alpha) < 0.05);
    CHECK(std::abs(var - alpha) < 0.15);
  }
  CHECK_THROWS_AS(s.gamma(0.0), std::invalid_argument);
  CHECK_THROWS_AS(s.gamma(-1.0), std::invalid_argument);
}

TEST_CASE("dirichlet draws are simplex points") {
  SeedStream s(19);
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> d = s.dirichlet(0.5, 7);
    CHECK(d.size() == 7);
    double total = 0.0;
    for (double x : d) {
      CHECK(x >= 0.0);
      total += x;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(s.dirichlet(0.5, 0), std::invalid_argument);
}

TEST_CASE("usable as a UniformRandomBitGenerator") {
  std::vector<int> v(20);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> w = v;
  SeedStream a(23), b(23);
  std::shuffle(v.begin(), v.end(), a);
  std::shuffle(w.begin(), w.end(), b);
  CHECK(v == w);
  CHECK(std::is_permutation(v.begin(), v.end(), w.begin()));
}
