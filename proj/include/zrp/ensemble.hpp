#pragma once

#include "zrp/rates.hpp"

namespace zrp {

// Single-site marginal of the product invariant measure at fugacity phi:
// unnormalized weight w(k) = phi^k / g!(k), truncated once the shell sums
// |k| = m fall below rel_tol relative to the running total.
//
// The family {nu_phi} is exponential in log phi with sufficient statistic k,
// so density/fugacity derivatives reduce to covariance and third-cumulant
// sums over the table.
class Ensemble {
 public:
  Ensemble(RateFamily fam, Vec phi, double rel_tol = 1e-13, int cap_max = 2048);

  int n_species() const { return n_; }
  const RateFamily& rates() const { return fam_; }
  const Vec& fugacity() const { return phi_; }
  int cap() const { return cap_; }            // largest shell summed
  double tail_fraction() const { return tail_; }  // last shell / Z

  double partition() const { return Z_; }
  const Vec& density() const { return a_; }
  const Mat& covariance() const { return gamma_; }
  // kappa3(p,q,m) = E[(k_p - a_p)(k_q - a_q)(k_m - a_m)], fully symmetric.
  double cumulant3(int p, int q, int m) const { return kappa3_[static_cast<size_t>(p)](q, m); }

  // E[g_i(k)]; equals phi_i exactly when the ratio-compatibility identity holds.
  Vec mean_rate() const;

  // Derivatives of the mean rate as a function of density, via the chain
  // rule through log-fugacity: d a / d log phi = Gamma.
  Mat grad_mean_rate() const;                // (i,j): d E[g_i] / d a_j
  std::vector<Mat> hess_mean_rate() const;   // [i](j,l): second derivative
  Mat grad_log_fugacity() const;             // d log phi / d a = Gamma^{-1}

  double mean_of(const std::function<double(const OccVec&)>& f) const;

  // Distribution of the total occupancy |k|; index m holds P(|k| = m).
  std::vector<double> total_pmf() const;

  OccVec sample(Rng& rng) const;

  const std::vector<OccVec>& states() const { return states_; }
  const std::vector<double>& weights() const { return w_; }  // unnormalized

  // Invert the density map: find phi with E_phi[k] = a (damped Newton in
  // log phi, Jacobian Gamma). Throws NumericalError when no interior
  // fugacity reproduces the requested density.
  static Vec fugacity_of_density(const RateFamily& fam, const Vec& a, double rel_tol = 1e-13,
                                 double tol = 1e-12, int max_iter = 200);

 private:
  RateFamily fam_;
  Vec phi_;
  int n_ = 0, cap_ = 0;
  double Z_ = 0, tail_ = 0;
  Vec a_;
  Mat gamma_;
  std::vector<Mat> kappa3_;
  std::vector<OccVec> states_;
  std::vector<double> w_;
  std::vector<double> cum_;  // cumulative weights for sampling
};

}  // namespace zrp
