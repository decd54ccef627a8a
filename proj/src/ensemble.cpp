#include "zrp/ensemble.hpp"

#include "zrp/kahan.hpp"

#include <algorithm>
#include <cmath>

namespace zrp {

Ensemble::Ensemble(RateFamily fam, Vec phi, double rel_tol, int cap_max)
    : fam_(std::move(fam)), phi_(std::move(phi)), n_(static_cast<int>(phi_.size())) {
  if (n_ != fam_.n_species()) throw DomainError("ensemble: fugacity dimension mismatch");
  for (int i = 0; i < n_; ++i)
    if (!(phi_[i] > 0.0)) throw DomainError("ensemble: fugacity must be positive");

  Vec log_phi = phi_.array().log().matrix();
  const int hard_cap = std::min(cap_max, fam_.cap());

  Kahan<double> Z;
  int calm = 0;  // consecutive shells below tolerance
  for (int m = 0; m <= hard_cap; ++m) {
    Kahan<double> shell;
    for_each_on_shell(n_, m, [&](const OccVec& k) {
      double lw = -fam_.log_g_factorial(k);
      for (int i = 0; i < n_; ++i) lw += k[static_cast<size_t>(i)] * log_phi[i];
      double w = std::exp(lw);
      if (!std::isfinite(w)) throw NumericalError("ensemble: weight overflow");
      states_.push_back(k);
      w_.push_back(w);
      shell.add(w);
    });
    Z.add(shell.value());
    cap_ = m;
    tail_ = shell.value() / Z.value();
    if (m >= 4 && tail_ < rel_tol)
      ++calm;
    else
      calm = 0;
    if (calm >= 3) break;
  }
  if (calm < 3) throw NumericalError("ensemble: shell sums did not converge below rel_tol");
  Z_ = Z.value();
  if (!(Z_ > 0.0) || !std::isfinite(Z_)) throw NumericalError("ensemble: bad partition sum");

  // moments (two passes: mean first, then central moments for stability)
  std::vector<Kahan<double>> am(static_cast<size_t>(n_));
  for (size_t s = 0; s < states_.size(); ++s)
    for (int i = 0; i < n_; ++i) am[static_cast<size_t>(i)].add(w_[s] * states_[s][static_cast<size_t>(i)]);
  a_.resize(n_);
  for (int i = 0; i < n_; ++i) a_[i] = am[static_cast<size_t>(i)].value() / Z_;

  std::vector<Kahan<double>> cm2(static_cast<size_t>(n_ * n_)), cm3(static_cast<size_t>(n_ * n_ * n_));
  Vec d(n_);
  for (size_t s = 0; s < states_.size(); ++s) {
    for (int i = 0; i < n_; ++i) d[i] = states_[s][static_cast<size_t>(i)] - a_[i];
    for (int p = 0; p < n_; ++p)
      for (int q = p; q < n_; ++q) {
        cm2[static_cast<size_t>(p * n_ + q)].add(w_[s] * d[p] * d[q]);
        for (int r = q; r < n_; ++r) cm3[static_cast<size_t>((p * n_ + q) * n_ + r)].add(w_[s] * d[p] * d[q] * d[r]);
      }
  }
  gamma_.resize(n_, n_);
  kappa3_.assign(static_cast<size_t>(n_), Mat::Zero(n_, n_));
  for (int p = 0; p < n_; ++p)
    for (int q = p; q < n_; ++q) {
      gamma_(p, q) = gamma_(q, p) = cm2[static_cast<size_t>(p * n_ + q)].value() / Z_;
      for (int r = q; r < n_; ++r) {
        double v = cm3[static_cast<size_t>((p * n_ + q) * n_ + r)].value() / Z_;
        int idx[3] = {p, q, r};  // already sorted by loop order
        do kappa3_[static_cast<size_t>(idx[0])](idx[1], idx[2]) = v;
        while (std::next_permutation(idx, idx + 3));
      }
    }

  cum_.resize(w_.size());
  Kahan<double> run;
  for (size_t s = 0; s < w_.size(); ++s) {
    run.add(w_[s]);
    cum_[s] = run.value();
  }
}

Vec Ensemble::mean_rate() const {
  std::vector<Kahan<double>> acc(static_cast<size_t>(n_));
  for (size_t s = 0; s < states_.size(); ++s)
    for (int i = 0; i < n_; ++i)
      if (states_[s][static_cast<size_t>(i)] > 0) acc[static_cast<size_t>(i)].add(w_[s] * fam_.rate(i, states_[s]));
  Vec out(n_);
  for (int i = 0; i < n_; ++i) out[i] = acc[static_cast<size_t>(i)].value() / Z_;
  return out;
}

Mat Ensemble::grad_log_fugacity() const {
  return gamma_.llt().solve(Mat::Identity(n_, n_));
}

Mat Ensemble::grad_mean_rate() const {
  // d E[g_i] / d log phi_m = Cov(g_i, k_m), then chain through Gamma^{-1}.
  Vec gbar = mean_rate();
  Mat cov_gk = Mat::Zero(n_, n_);
  std::vector<Kahan<double>> acc(static_cast<size_t>(n_ * n_));
  for (size_t s = 0; s < states_.size(); ++s)
    for (int i = 0; i < n_; ++i) {
      double g = states_[s][static_cast<size_t>(i)] > 0 ? fam_.rate(i, states_[s]) : 0.0;
      for (int m = 0; m < n_; ++m)
        acc[static_cast<size_t>(i * n_ + m)].add(w_[s] * (g - gbar[i]) * (states_[s][static_cast<size_t>(m)] - a_[m]));
    }
  for (int i = 0; i < n_; ++i)
    for (int m = 0; m < n_; ++m) cov_gk(i, m) = acc[static_cast<size_t>(i * n_ + m)].value() / Z_;
  return cov_gk * grad_log_fugacity();
}

std::vector<Mat> Ensemble::hess_mean_rate() const {
  // In log-fugacity coordinates lambda:
  //   d E[g_i]/d lambda_m           = Cov(g_i, k_m)              =: C(i,m)
  //   d C(i,m) / d lambda_r         = kappa3(g_i, k_m, k_r)      =: K3g[i](m,r)
  //   d Gamma_pq / d lambda_r       = kappa3(k_p, k_q, k_r)
  // and d lambda / d a = Gamma^{-1} turns these into density derivatives:
  //   H_i(j,l) = sum_{m,r} K3g[i](m,r) Gi(m,j) Gi(r,l)
  //            - sum_{m,p,q,r} C(i,m) Gi(m,p) kappa3(p,q,r) Gi(q,j) Gi(r,l)
  Vec gbar = mean_rate();
  Mat Gi = grad_log_fugacity();

  Mat C = Mat::Zero(n_, n_);
  std::vector<Mat> K3g(static_cast<size_t>(n_), Mat::Zero(n_, n_));
  std::vector<Kahan<double>> accC(static_cast<size_t>(n_ * n_)), accK(static_cast<size_t>(n_ * n_ * n_));
  Vec d(n_);
  for (size_t s = 0; s < states_.size(); ++s) {
    for (int m = 0; m < n_; ++m) d[m] = states_[s][static_cast<size_t>(m)] - a_[m];
    for (int i = 0; i < n_; ++i) {
      double g = states_[s][static_cast<size_t>(i)] > 0 ? fam_.rate(i, states_[s]) : 0.0;
      double gd = g - gbar[i];
      for (int m = 0; m < n_; ++m) {
        accC[static_cast<size_t>(i * n_ + m)].add(w_[s] * gd * d[m]);
        for (int r = m; r < n_; ++r) accK[static_cast<size_t>((i * n_ + m) * n_ + r)].add(w_[s] * gd * d[m] * d[r]);
      }
    }
  }
  for (int i = 0; i < n_; ++i)
    for (int m = 0; m < n_; ++m) {
      C(i, m) = accC[static_cast<size_t>(i * n_ + m)].value() / Z_;
      for (int r = m; r < n_; ++r) {
        // third joint cumulant of three variables = fully centered third moment
        double v = accK[static_cast<size_t>((i * n_ + m) * n_ + r)].value() / Z_;
        K3g[static_cast<size_t>(i)](m, r) = v;
        K3g[static_cast<size_t>(i)](r, m) = v;
      }
    }

  std::vector<Mat> H(static_cast<size_t>(n_), Mat::Zero(n_, n_));
  for (int i = 0; i < n_; ++i) {
    Mat term1 = Gi.transpose() * K3g[static_cast<size_t>(i)] * Gi;
    // w_p = sum_m C(i,m) Gi(m,p); contract kappa3 over its first slot
    Vec wv = Gi.transpose() * C.row(i).transpose();
    Mat k3w = Mat::Zero(n_, n_);
    for (int p = 0; p < n_; ++p) k3w += wv[p] * kappa3_[static_cast<size_t>(p)];
    H[static_cast<size_t>(i)] = term1 - Gi.transpose() * k3w * Gi;
  }
  return H;
}

double Ensemble::mean_of(const std::function<double(const OccVec&)>& f) const {
  Kahan<double> acc;
  for (size_t s = 0; s < states_.size(); ++s) acc.add(w_[s] * f(states_[s]));
  return acc.value() / Z_;
}

std::vector<double> Ensemble::total_pmf() const {
  std::vector<Kahan<double>> acc(static_cast<size_t>(cap_) + 1);
  for (size_t s = 0; s < states_.size(); ++s) acc[static_cast<size_t>(total_occupancy(states_[s]))].add(w_[s]);
  std::vector<double> out(acc.size());
  for (size_t m = 0; m < acc.size(); ++m) out[m] = acc[m].value() / Z_;
  return out;
}

OccVec Ensemble::sample(Rng& rng) const {
  double r = rng.uniform() * cum_.back();
  size_t lo = static_cast<size_t>(std::lower_bound(cum_.begin(), cum_.end(), r) - cum_.begin());
  if (lo >= states_.size()) lo = states_.size() - 1;
  return states_[lo];
}

Vec Ensemble::fugacity_of_density(const RateFamily& fam, const Vec& a, double rel_tol, double tol, int max_iter) {
  const int n = static_cast<int>(a.size());
  for (int i = 0; i < n; ++i)
    if (!(a[i] > 0.0)) throw DomainError("fugacity_of_density: density must be positive");

  Vec lambda = a.array().log().matrix();  // exact for unit-rate independent particles
  double resid = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    Ensemble ens(fam, lambda.array().exp().matrix(), rel_tol);
    Vec r = a - ens.density();
    resid = (r.array() / a.array()).abs().maxCoeff();
    if (resid < tol) return ens.fugacity();
    Vec step = ens.covariance().llt().solve(r);
    double s = 1.0;
    while (s > 1e-8) {
      Vec cand = lambda + s * step;
      try {
        Ensemble trial(fam, cand.array().exp().matrix(), rel_tol);
        Vec rc = a - trial.density();
        if ((rc.array() / a.array()).abs().maxCoeff() < resid) {
          lambda = cand;
          break;
        }
      } catch (const NumericalError&) {
        // fugacity left the convergence region; shorten the step
      }
      s *= 0.5;
    }
    if (s <= 1e-8) throw NumericalError("fugacity_of_density: Newton stalled");
  }
  throw NumericalError("fugacity_of_density: no convergence");
}

}  // namespace zrp
