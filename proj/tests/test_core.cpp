#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "zrp/fenwick.hpp"
#include "zrp/kahan.hpp"
#include "zrp/rng.hpp"

#include <cmath>
#include <vector>

using namespace zrp;

// ---- rng ----

TEST_CASE("rng: identical (seed, stream) pairs replay the same sequence") {
  Rng a(12345, 7), b(12345, 7);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("rng: streams with the same seed do not collide") {
  Rng a(42, 0), b(42, 1);
  int agree = 0;
  for (int i = 0; i < 1000; ++i) agree += (a.next_u64() == b.next_u64());
  CHECK(agree == 0);
}

TEST_CASE("rng: uniform stays inside the open unit interval") {
  Rng r(9);
  for (int i = 0; i < 100000; ++i) {
    double u = r.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
  }
}

TEST_CASE("rng: moment sanity for normal and exponential draws") {
  Rng r(1234);
  const int n = 200000;
  double s1 = 0, s2 = 0, se = 0;
  for (int i = 0; i < n; ++i) {
    double z = r.normal();
    s1 += z;
    s2 += z * z;
    se += r.exponential();
  }
  CHECK(std::abs(s1 / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
  CHECK(std::abs(se / n - 1.0) < 0.01);
}

// ---- fenwick ----

TEST_CASE("fenwick: prefix sums and sampling match a linear scan") {
  Rng r(77);
  const int n = 137;
  std::vector<double> w(n, 0.0);
  Fenwick<double> f(n);
  for (int step = 0; step < 500; ++step) {
    int i = static_cast<int>(r.below(n));
    double d = r.uniform() - 0.3;  // mix of increases and decreases
    if (w[i] + d < 0) d = -w[i];   // keep weights nonnegative
    w[i] += d;
    f.add(i, d);
  }
  double run = 0;
  for (int i = 0; i <= n; ++i) {
    CHECK(f.prefix(i) == doctest::Approx(run).epsilon(1e-12));
    if (i < n) run += w[i];
  }
  // sample(r) = the unique i with prefix(i) <= r < prefix(i+1)
  for (int trial = 0; trial < 2000; ++trial) {
    double target = r.uniform() * f.total();
    int got = f.sample(target);
    int want = 0;
    double acc = 0;
    while (want < n - 1 && acc + w[want] <= target) acc += w[want++];
    CHECK(got == want);
  }
}

TEST_CASE("fenwick: rebuild equals incremental construction") {
  Rng r(5);
  std::vector<double> w(64);
  for (auto& x : w) x = r.uniform();
  Fenwick<double> inc(64), bulk;
  for (int i = 0; i < 64; ++i) inc.add(i, w[static_cast<size_t>(i)]);
  bulk.rebuild(w);
  for (int i = 0; i <= 64; ++i) CHECK(inc.prefix(i) == doctest::Approx(bulk.prefix(i)).epsilon(1e-15));
}

TEST_CASE("fenwick: sampling at the boundaries stays in range") {
  Fenwick<double> f(4);
  f.add(1, 2.0);
  f.add(3, 1.0);
  CHECK(f.sample(0.0) == 1);      // first site with positive weight
  CHECK(f.sample(1.9999) == 1);
  CHECK(f.sample(2.0001) == 3);
  CHECK(f.sample(5.0) == 3);      // off the end clamps to the last site
}

// ---- kahan ----

TEST_CASE("kahan: compensated sum survives catastrophic cancellation") {
  Kahan<double> k;
  k.add(1e16);
  for (int i = 0; i < 10000; ++i) k.add(1.0);
  k.add(-1e16);
  CHECK(k.value() == doctest::Approx(10000.0).epsilon(1e-12));

  double naive = 1e16;
  for (int i = 0; i < 10000; ++i) naive += 1.0;
  naive -= 1e16;
  CHECK(naive != 10000.0);  // demonstrates why compensation is needed
}
