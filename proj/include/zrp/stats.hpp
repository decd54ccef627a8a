#pragma once

#include "zrp/kmc.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace zrp {

// Observable of a single site's occupancy vector (n entries).
struct SiteObservable {
  std::function<double(const int32_t*)> eval;
};

// Value, density gradient, and density Hessian of a -> E_a[f], computed
// exactly from the single-site tables via the cumulant chain rule through
// log-fugacity (no finite differences).
struct TildeExpansion {
  double value = 0;
  Vec grad;
  Mat hess;
};
TildeExpansion tilde_expansion(const RateFamily& fam, const Vec& a0, const SiteObservable& f);
TildeExpansion tilde_expansion(const Ensemble& ens, const SiteObservable& f);

// ---- block-conditioning comparison ----

// One bin of the conditional-expectation table: block species means y with
// probability `weight`, the conditional expectation of f given the block
// sums, and the first/second order density expansions evaluated at y.
struct EoeBin {
  Vec y;
  double weight = 0;
  double cond = 0;
  double first = 0;   // grad . (y - a0)
  double second = 0;  // first + 1/2 sum hess_jk {(y-a)_j (y-a)_k - Gamma_jk / m}
};

struct EnsembleComparison {
  int ell = 0;
  int m = 0;           // 2 ell + 1 block sites
  bool exact = true;   // sum-distribution convolution vs Monte Carlo binning
  double l4_first = 0;   // || cond - first ||_{L4} over the block-sum law
  double l4_second = 0;  // || cond - second ||_{L4}
  long bins = 0;
  long low_bins = 0;      // Monte Carlo bins under the per-bin sample floor
  double covered = 1.0;   // probability mass of the bins entering the norms
  std::vector<EoeBin> table;
};

// Conditional expectations of f given block species sums at radii `ells`,
// against the first- and second-order density expansions. Exact path:
// m-fold sparse convolution of the single-site law (entries pruned below
// 1e-18 of the peak); switches to Monte Carlo binning with `samples` draws
// when the sum table would exceed max_states entries (bins with fewer than
// 200 hits are excluded and counted in low_bins). DomainError on empty
// ells, ell < 1, or a Monte Carlo fallback without samples.
std::vector<EnsembleComparison> eoe_check(const RateFamily& fam, const Vec& a0,
                                          const SiteObservable& f, const std::vector<int>& ells,
                                          long samples, Rng& rng, long max_states = 1'000'000);

// Least-squares slope of log y against log x; requires two or more points
// with positive entries (DomainError otherwise).
double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// ---- block-replacement time integrals ----

// Per-radius estimate of E[ sup_t ( int_0^t sum_x psi(tau_x alpha_s) h(x)
// ds )^2 ] with psi = f - first/second order block replacement (the full
// expansion of eoe_check at the running block means). The supremum is exact:
// the integral is piecewise linear in time, so the running extremum over
// event segments is the path supremum. term_grad and term_block carry the
// expected bound shapes T ell/N * mean(h^2) and T^2 N^2/ell^3 * mean|h|^2.
struct BgEstimate {
  int ell = 0;
  double estimate = 0;
  double se = 0;
  double term_grad = 0;
  double term_block = 0;
};

// Runs `replicas` stationary trajectories at p.N sites (one run feeds every
// radius) and aggregates mean and standard error over replicas. h is a
// lattice vector of p.N weights (typically a discrete derivative of a test
// function). DomainError when a block does not fit the torus, h has the
// wrong length, or replicas < 2.
std::vector<BgEstimate> bg_diagnostic(const RateFamily& fam, const Vec& a0,
                                      const SiteObservable& f, const std::vector<double>& h,
                                      const SimParams& p, const std::vector<int>& ells,
                                      int replicas, uint64_t seed);

}  // namespace zrp
