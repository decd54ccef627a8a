#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "zrp/ensemble.hpp"

#include <cmath>

using namespace zrp;

namespace {

// Tilted two-species walk: weight(1,0) = 1+x, weight(0,1) = 1+y over
// independent unit-rate particles.
RateFamily tilted_walk(double x, double y) {
  OccTable lam(2, 1, 1.0);
  lam.set({1, 0}, 1.0 + x);
  lam.set({0, 1}, 1.0 + y);
  return RateFamily::perturbed(RateFamily::independent(2), lam);
}

// Brute-force moment oracle for the tilted walk: sums the explicit weights
// lam(k) phi^k / (k1! k2!) on a grid, bypassing the ensemble machinery.
struct TiltedOracle {
  double x, y, p1, p2;
  template <typename F>
  double mean(F&& f) const {
    double Z = 0, S = 0;
    double f1 = 1;
    for (int k1 = 0; k1 <= 60; ++k1) {
      if (k1 > 0) f1 *= k1;
      double f2 = 1;
      for (int k2 = 0; k2 <= 60; ++k2) {
        if (k2 > 0) f2 *= k2;
        double lam = (k1 == 1 && k2 == 0) ? 1 + x : (k1 == 0 && k2 == 1) ? 1 + y : 1.0;
        double w = lam * std::pow(p1, k1) * std::pow(p2, k2) / (f1 * f2);
        Z += w;
        S += w * f(k1, k2);
      }
    }
    return S / Z;
  }
};

}  // namespace

// ---- closed-form oracles ----

TEST_CASE("ensemble: independent particles give product-Poisson moments") {
  auto fam = RateFamily::independent(2);
  Vec phi(2);
  phi << 0.7, 1.3;
  Ensemble ens(fam, phi);
  CHECK(ens.partition() == doctest::Approx(std::exp(2.0)).epsilon(1e-12));
  CHECK(ens.density()[0] == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(ens.density()[1] == doctest::Approx(1.3).epsilon(1e-12));
  CHECK(ens.covariance()(0, 0) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(ens.covariance()(1, 1) == doctest::Approx(1.3).epsilon(1e-12));
  CHECK(ens.covariance()(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ens.cumulant3(0, 0, 0) == doctest::Approx(0.7).epsilon(1e-11));
  CHECK(ens.cumulant3(1, 1, 1) == doctest::Approx(1.3).epsilon(1e-11));
  CHECK(std::abs(ens.cumulant3(0, 0, 1)) < 1e-12);
  CHECK(std::abs(ens.cumulant3(0, 1, 1)) < 1e-12);
  // mean rate = fugacity, gradient = identity, curvature = 0
  CHECK((ens.mean_rate() - phi).norm() < 1e-12);
  CHECK((ens.grad_mean_rate() - Mat::Identity(2, 2)).norm() < 1e-11);
  auto H = ens.hess_mean_rate();
  CHECK(H[0].norm() < 1e-9);
  CHECK(H[1].norm() < 1e-9);
}

TEST_CASE("ensemble: constant scalar rate gives geometric moments") {
  // g(m) = 1 for m >= 1: w(k) = phi^k, a = phi/(1-phi)
  auto fam = RateFamily::multi_color(1, [](int m) { return m > 0 ? 1.0 : 0.0; }, 1200);
  double phi = 0.6;
  // higher moments amplify the truncated tail by powers of |k|
  Ensemble ens(fam, Vec::Constant(1, phi), 1e-16);
  double q = 1.0 - phi;
  CHECK(ens.partition() == doctest::Approx(1.0 / q).epsilon(1e-13));
  CHECK(ens.density()[0] == doctest::Approx(phi / q).epsilon(1e-12));
  CHECK(ens.covariance()(0, 0) == doctest::Approx(phi / (q * q)).epsilon(1e-11));
  CHECK(ens.cumulant3(0, 0, 0) == doctest::Approx(phi * (1 + phi) / (q * q * q)).epsilon(1e-10));
  CHECK(ens.mean_rate()[0] == doctest::Approx(phi).epsilon(1e-12));
  // phi(a) = a/(1+a): phi' = (1-phi)^2, phi'' = -2 (1-phi)^3
  CHECK(ens.grad_mean_rate()(0, 0) == doctest::Approx(q * q).epsilon(1e-11));
  CHECK(ens.hess_mean_rate()[0](0, 0) == doctest::Approx(-2.0 * q * q * q).epsilon(1e-9));
}

TEST_CASE("ensemble: tilted walk matches a brute-force grid sum") {
  double x = 3.0, y = -0.5, p1 = 0.49, p2 = 0.51;
  auto fam = tilted_walk(x, y);
  Vec phi(2);
  phi << p1, p2;
  Ensemble ens(fam, phi);
  TiltedOracle or_{x, y, p1, p2};

  double Zo = std::exp(p1 + p2) + x * p1 + y * p2;
  CHECK(ens.partition() == doctest::Approx(Zo).epsilon(1e-12));

  Vec a(2);
  a << or_.mean([](int k1, int) { return k1; }), or_.mean([](int, int k2) { return k2; });
  CHECK((ens.density() - a).norm() < 1e-12);

  auto cm = [&](int p, int q2) {
    return or_.mean([&](int k1, int k2) {
      double d1 = k1 - a[0], d2 = k2 - a[1];
      return std::pow(d1, p) * std::pow(d2, q2);
    });
  };
  CHECK(ens.covariance()(0, 0) == doctest::Approx(cm(2, 0)).epsilon(1e-11));
  CHECK(ens.covariance()(0, 1) == doctest::Approx(cm(1, 1)).epsilon(1e-10));
  CHECK(ens.covariance()(1, 1) == doctest::Approx(cm(0, 2)).epsilon(1e-11));
  CHECK(ens.cumulant3(0, 0, 0) == doctest::Approx(cm(3, 0)).epsilon(1e-10));
  CHECK(ens.cumulant3(0, 0, 1) == doctest::Approx(cm(2, 1)).epsilon(1e-9));
  CHECK(ens.cumulant3(0, 1, 1) == doctest::Approx(cm(1, 2)).epsilon(1e-9));
  CHECK(ens.cumulant3(1, 1, 1) == doctest::Approx(cm(0, 3)).epsilon(1e-10));

  // compatible ratios make the mean rate land exactly on the fugacity
  CHECK((ens.mean_rate() - phi).norm() < 1e-12);
}

// ---- density/fugacity inversion ----

TEST_CASE("ensemble: fugacity_of_density round-trips across families") {
  auto check_roundtrip = [](const RateFamily& fam, const Vec& phi) {
    Ensemble ens(fam, phi);
    Vec back = Ensemble::fugacity_of_density(fam, ens.density());
    REQUIRE((back - phi).cwiseAbs().maxCoeff() < 1e-10);
  };
  Vec p2(2);
  p2 << 0.8, 1.7;
  check_roundtrip(RateFamily::independent(2), p2);
  check_roundtrip(tilted_walk(3.0, -0.9), (Vec(2) << 0.49, 0.51).finished());
  check_roundtrip(RateFamily::multi_color(
                      2, [](int m) { return m == 0 ? 0.0 : (m == 1 ? 2.0 : (m == 2 ? 9.0 : 1.0 * m)); }, 300),
                  (Vec(2) << 0.9, 1.1).finished());
}

TEST_CASE("ensemble: fugacity outside the convergence region is rejected") {
  auto fam = RateFamily::multi_color(1, [](int m) { return m > 0 ? 1.0 : 0.0; }, 600);
  CHECK_THROWS_AS(Ensemble(fam, Vec::Constant(1, 1.05)), NumericalError);
}

// ---- derivative cross-checks ----

TEST_CASE("ensemble: mean-rate derivatives agree with finite differences in density") {
  auto fam = tilted_walk(2.0, 1.5);
  Vec a0(2);
  a0 << 0.6, 0.9;

  auto rate_at = [&](const Vec& a) {
    Vec phi = Ensemble::fugacity_of_density(fam, a);
    return Ensemble(fam, phi).mean_rate();
  };

  Vec phi0 = Ensemble::fugacity_of_density(fam, a0);
  Ensemble ens(fam, phi0);
  Mat G = ens.grad_mean_rate();
  auto H = ens.hess_mean_rate();

  double h = 1e-3;
  for (int j = 0; j < 2; ++j) {
    Vec e = Vec::Zero(2);
    e[j] = 1.0;
    // five-point gradient
    Vec g1 = rate_at(a0 + h * e), gm1 = rate_at(a0 - h * e);
    Vec g2 = rate_at(a0 + 2 * h * e), gm2 = rate_at(a0 - 2 * h * e);
    Vec fd = (8.0 * (g1 - gm1) - (g2 - gm2)) / (12.0 * h);
    for (int i = 0; i < 2; ++i) CHECK(G(i, j) == doctest::Approx(fd[i]).epsilon(5e-8));
    // second derivative along e_j
    Vec g0 = rate_at(a0);
    Vec fd2 = (-(g2 + gm2) + 16.0 * (g1 + gm1) - 30.0 * g0) / (12.0 * h * h);
    for (int i = 0; i < 2; ++i) CHECK(H[static_cast<size_t>(i)](j, j) == doctest::Approx(fd2[i]).epsilon(1e-5));
  }
  // mixed second derivative
  Vec e0 = Vec::Zero(2), e1 = Vec::Zero(2);
  e0[0] = 1.0;
  e1[1] = 1.0;
  Vec gpp = rate_at(a0 + h * e0 + h * e1), gpm = rate_at(a0 + h * e0 - h * e1);
  Vec gmp = rate_at(a0 - h * e0 + h * e1), gmm = rate_at(a0 - h * e0 - h * e1);
  Vec fd01 = (gpp - gpm - gmp + gmm) / (4.0 * h * h);
  for (int i = 0; i < 2; ++i) CHECK(H[static_cast<size_t>(i)](0, 1) == doctest::Approx(fd01[i]).epsilon(1e-4));
}

TEST_CASE("ensemble: curvature formula matches the compatible-family closed form") {
  // When ratios are compatible, E[g_i] = phi_i and the curvature reduces to
  //   phi_i [ Gi_ij Gi_il - sum_{pqr} Gi_ip Gi_qj Gi_rl kappa3(p,q,r) ].
  auto fam = tilted_walk(3.0, -0.9);
  Vec phi(2);
  phi << 0.49, 0.51;
  Ensemble ens(fam, phi);
  Mat Gi = ens.grad_log_fugacity();
  auto H = ens.hess_mean_rate();
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int l = 0; l < 2; ++l) {
        double closed = Gi(i, j) * Gi(i, l);
        for (int p = 0; p < 2; ++p)
          for (int q = 0; q < 2; ++q)
            for (int r = 0; r < 2; ++r) closed -= Gi(i, p) * Gi(q, j) * Gi(r, l) * ens.cumulant3(p, q, r);
        closed *= phi[i];
        REQUIRE(H[static_cast<size_t>(i)](j, l) == doctest::Approx(closed).epsilon(1e-9));
      }
}

// ---- distributional accessors ----

TEST_CASE("ensemble: total-occupancy pmf is a proper distribution") {
  auto fam = tilted_walk(1.0, 0.5);
  Ensemble ens(fam, (Vec(2) << 0.8, 0.4).finished());
  auto pmf = ens.total_pmf();
  double s = 0, mean = 0;
  for (size_t m = 0; m < pmf.size(); ++m) {
    CHECK(pmf[m] >= 0.0);
    s += pmf[m];
    mean += static_cast<double>(m) * pmf[m];
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mean == doctest::Approx(ens.density().sum()).epsilon(1e-12));
}

TEST_CASE("ensemble: sampling reproduces the density within Monte Carlo error") {
  auto fam = RateFamily::independent(2);
  Vec phi(2);
  phi << 0.7, 1.3;
  Ensemble ens(fam, phi);
  Rng rng(999);
  const int M = 40000;
  double s0 = 0, s1 = 0;
  for (int t = 0; t < M; ++t) {
    OccVec k = ens.sample(rng);
    s0 += k[0];
    s1 += k[1];
  }
  // Poisson variance phi, allow 4 sigma
  CHECK(std::abs(s0 / M - 0.7) < 4.0 * std::sqrt(0.7 / M));
  CHECK(std::abs(s1 / M - 1.3) < 4.0 * std::sqrt(1.3 / M));
}
