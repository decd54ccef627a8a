#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "zrp/families.hpp"
#include "zrp/fields.hpp"
#include "zrp/stats.hpp"

#include <cmath>
#include <vector>

using namespace zrp;

namespace {

// E[h(X)] for X ~ Binomial(K, 1/m).
double binomial_mean(int K, int m, const std::function<double(int)>& h) {
  double out = 0;
  const double logp = -std::log(static_cast<double>(m));
  const double logq = std::log(1.0 - 1.0 / m);
  for (int k = 0; k <= K; ++k) {
    const double logc = std::lgamma(K + 1.0) - std::lgamma(k + 1.0) - std::lgamma(K - k + 1.0);
    out += h(k) * std::exp(logc + k * logp + (K - k) * logq);
  }
  return out;
}

}  // namespace

TEST_CASE("density expansion: matches the mean-rate derivative machinery") {
  const RateFamily fam = tilted_walk(3.0, -0.96);
  const Ensemble ens(fam, (Vec(2) << 0.8, 0.55).finished());
  const Vec gt = ens.mean_rate();
  const Mat grad = ens.grad_mean_rate();
  const std::vector<Mat> hess = ens.hess_mean_rate();

  for (int i = 0; i < 2; ++i) {
    SiteObservable f{[&fam, i](const int32_t* k) { return k[i] > 0 ? fam.rate(i, k) : 0.0; }};
    const TildeExpansion tx = tilde_expansion(ens, f);
    CHECK(tx.value == doctest::Approx(gt[i]).epsilon(1e-11));
    CHECK((tx.grad.transpose() - grad.row(i)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((tx.hess - hess[static_cast<size_t>(i)]).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("block conditioning: binomial oracle for unit rates") {
  const RateFamily fam = RateFamily::independent(1);
  const Vec a0 = (Vec(1) << 0.8).finished();
  SiteObservable f{[](const int32_t* k) { return static_cast<double>(k[0]) * k[0]; }};
  Rng rng(1, 0);
  const auto out = eoe_check(fam, a0, f, {2, 3}, 0, rng);

  REQUIRE(out.size() == 2);
  for (const EnsembleComparison& cmp : out) {
    CHECK(cmp.exact);
    CHECK(cmp.covered == doctest::Approx(1.0).epsilon(1e-9));
    REQUIRE(cmp.bins > 5);
    for (const EoeBin& bin : cmp.table) {
      // The tabulated site law has finite support, so deep-tail bins deviate
      // from the untruncated closed form; compare where the mass lives.
      if (bin.weight < 1e-8) continue;
      const int K = static_cast<int>(std::lround(bin.y[0] * cmp.m));
      const double want = binomial_mean(K, cmp.m, [](int k) { return static_cast<double>(k) * k; });
      CHECK(bin.cond == doctest::Approx(want).epsilon(1e-9));
    }
  }
}

TEST_CASE("block conditioning: linear observables are reproduced exactly") {
  const RateFamily fam = tilted_walk(3.0, -0.96);
  const Vec a0 = [&] {
    const Ensemble ens(fam, (Vec(2) << 0.8, 0.55).finished());
    return ens.density();
  }();
  SiteObservable lin{[a0](const int32_t* k) { return 3.0 * (k[0] - a0[0]) - 2.0 * (k[1] - a0[1]); }};
  Rng rng(2, 0);
  const auto out = eoe_check(fam, a0, lin, {1, 3}, 0, rng);
  for (const EnsembleComparison& cmp : out) {
    CHECK(cmp.l4_first < 1e-10);
    CHECK(cmp.l4_second < 1e-10);
  }

  SiteObservable zero{[](const int32_t*) { return 0.0; }};
  const auto z = eoe_check(fam, a0, zero, {2}, 0, rng);
  CHECK(z[0].l4_first == 0.0);
  CHECK(z[0].l4_second == 0.0);
}

TEST_CASE("block conditioning: centered square has the closed-form residual") {
  // Unit rates at density a: conditional of (k-a)^2 - a given block sum y*m
  // exceeds the second-order expansion by exactly (a - y)/m.
  const RateFamily fam = RateFamily::independent(1);
  const double a = 0.8;
  SiteObservable f{[a](const int32_t* k) { return (k[0] - a) * (k[0] - a) - a; }};
  Rng rng(3, 0);
  const auto out = eoe_check(fam, (Vec(1) << a).finished(), f, {2, 4, 8, 16}, 0, rng);

  std::vector<double> ells, errs;
  for (const EnsembleComparison& cmp : out) {
    double fourth = 0, total = 0;
    for (const EoeBin& bin : cmp.table) {
      if (bin.weight > 1e-8)
        CHECK(bin.cond - bin.second == doctest::Approx((a - bin.y[0]) / cmp.m).epsilon(1e-7));
      fourth += bin.weight * std::pow(bin.y[0] - a, 4);
      total += bin.weight;
    }
    CHECK(cmp.l4_second ==
          doctest::Approx(std::pow(fourth / total, 0.25) / cmp.m).epsilon(1e-6));
    ells.push_back(cmp.ell);
    errs.push_back(cmp.l4_second);
  }
  // The closed form gives the -3/2 block-size law.
  const double slope = fit_loglog_slope(ells, errs);
  CHECK(slope > -2.0);
  CHECK(slope < -1.0);
}

TEST_CASE("block conditioning: recentered rates decay at both theorem rates") {
  const RateFamily fam = multi_color_bump(1, 0.1, 170);
  const Vec a0 = [&] {
    const Ensemble ens(fam, (Vec(1) << 1.0).finished());
    return ens.density();
  }();
  const Ensemble ens(fam, Ensemble::fugacity_of_density(fam, a0));
  const double gbar = ens.mean_rate()[0];
  SiteObservable f{[&fam, gbar](const int32_t* k) {
    return (k[0] > 0 ? fam.rate(0, k) : 0.0) - gbar;
  }};

  Rng rng(4, 0);
  const auto out = eoe_check(fam, a0, f, {2, 4, 8, 16}, 0, rng);
  std::vector<double> ells, first, second;
  for (const EnsembleComparison& cmp : out) {
    ells.push_back(cmp.ell);
    first.push_back(cmp.l4_first);
    second.push_back(cmp.l4_second);
    CHECK(cmp.l4_second < cmp.l4_first);  // quadratic replacement is sharper
  }
  for (size_t i = 1; i < out.size(); ++i) {
    CHECK(first[i] < first[i - 1]);
    CHECK(second[i] < second[i - 1]);
  }
  const double s1 = fit_loglog_slope(ells, first);
  const double s2 = fit_loglog_slope(ells, second);
  CHECK(s1 > -1.5);
  CHECK(s1 < -0.5);
  CHECK(s2 > -2.0);
  CHECK(s2 < -1.0);
}

TEST_CASE("block conditioning: Monte Carlo fallback approximates the exact table") {
  const RateFamily fam = RateFamily::independent(1);
  const Vec a0 = (Vec(1) << 0.8).finished();
  SiteObservable f{[](const int32_t* k) { return static_cast<double>(k[0]) * k[0]; }};

  Rng rng(5, 0);
  const auto exact = eoe_check(fam, a0, f, {2}, 0, rng);
  const auto mc = eoe_check(fam, a0, f, {2}, 300'000, rng, 1);

  CHECK(!mc[0].exact);
  CHECK(mc[0].low_bins > 0);
  CHECK(mc[0].covered > 0.99);
  CHECK(mc[0].covered < 1.0);
  CHECK(std::abs(mc[0].l4_first - exact[0].l4_first) < 0.25 * exact[0].l4_first);
  CHECK(std::abs(mc[0].l4_second - exact[0].l4_second) < 0.4 * exact[0].l4_second + 1e-4);

  Rng rng2(6, 0);
  CHECK_THROWS_AS(eoe_check(fam, a0, f, {2}, 0, rng2, 1), DomainError);
  CHECK_THROWS_AS(eoe_check(fam, a0, f, {}, 0, rng2), DomainError);
  CHECK_THROWS_AS(eoe_check(fam, a0, f, {0}, 0, rng2), DomainError);
  CHECK_THROWS_AS(eoe_check(fam, a0, SiteObservable{}, {2}, 0, rng2), DomainError);
}

TEST_CASE("log-log slope fit") {
  std::vector<double> x = {2, 4, 8, 16}, y;
  for (double v : x) y.push_back(3.0 * std::pow(v, -1.5));
  CHECK(fit_loglog_slope(x, y) == doctest::Approx(-1.5).epsilon(1e-12));
  CHECK_THROWS_AS(fit_loglog_slope({1.0}, {1.0}), DomainError);
  CHECK_THROWS_AS(fit_loglog_slope({1.0, -2.0}, {1.0, 1.0}), DomainError);
}

TEST_CASE("block replacement integral: exact zeros") {
  // Unit rates: the recentered rate observable vanishes identically.
  const RateFamily fam = RateFamily::independent(1);
  const Vec a0 = (Vec(1) << 0.8).finished();
  SiteObservable f{[a0](const int32_t* k) {
    return static_cast<double>(k[0]) - a0[0] - (k[0] - a0[0]);
  }};
  SimParams p;
  p.N = 32;
  p.gamma = 1.0;
  p.c = 0.3;
  p.T = 0.2;
  const TestFunction H = TestFunction::fourier(32, 1, false);
  const auto zero = bg_diagnostic(fam, a0, f, H.grad_n, p, {2, 4}, 3, 99);
  for (const BgEstimate& est : zero) {
    CHECK(est.estimate == 0.0);
    CHECK(est.term_grad > 0);
    CHECK(est.term_block > 0);
  }

  // Linear observable against constant weights: block averaging preserves
  // the lattice total, so the weighted sum cancels identically.
  SiteObservable lin{[a0](const int32_t* k) { return static_cast<double>(k[0]) - a0[0]; }};
  const std::vector<double> ones(32, 1.0);
  const auto flat = bg_diagnostic(fam, a0, lin, ones, p, {3}, 3, 99);
  CHECK(flat[0].estimate < 1e-20);
}

TEST_CASE("block replacement integral: trajectory estimates and guards") {
  const RateFamily fam = multi_color_bump(1, 0.1, 170);
  const Ensemble ens(fam, (Vec(1) << 1.0).finished());
  const Vec a0 = ens.density();
  const double gbar = ens.mean_rate()[0];
  const double dg = ens.grad_mean_rate()(0, 0);
  SiteObservable f{[&fam, gbar, dg, a0](const int32_t* k) {
    return (k[0] > 0 ? fam.rate(0, k) : 0.0) - gbar - dg * (k[0] - a0[0]);
  }};

  SimParams p;
  p.N = 48;
  p.gamma = 1.0;
  p.c = 0.35;
  p.T = 0.3;
  p.record_times = {0.1, 0.2, 0.3};  // audit points
  const TestFunction H = TestFunction::fourier(48, 1, false);

  const auto est = bg_diagnostic(fam, a0, f, H.grad_n, p, {2, 4, 8}, 6, 4242);
  REQUIRE(est.size() == 3);
  for (const BgEstimate& e : est) {
    CHECK(e.estimate > 0);
    CHECK(std::isfinite(e.estimate));
    CHECK(e.se >= 0);
  }

  CHECK_THROWS_AS(bg_diagnostic(fam, a0, f, H.grad_n, p, {24}, 4, 1), DomainError);
  CHECK_THROWS_AS(bg_diagnostic(fam, a0, f, std::vector<double>(8, 1.0), p, {2}, 4, 1),
                  DomainError);
  CHECK_THROWS_AS(bg_diagnostic(fam, a0, f, H.grad_n, p, {2}, 1, 1), DomainError);
}
