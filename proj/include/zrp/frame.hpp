#pragma once

#include "zrp/ensemble.hpp"

namespace zrp {

// Certificate for the common-speed condition at a density a0: the site
// covariance is diagonal and mean_rate_i / Gamma_ii takes one value lambda
// for every species. When it holds, all species share the drift speed
// lambda and the hydrodynamic matrix diag(mean_rate) Gamma^{-1} is lambda*I.
struct FrameCertificate {
  Vec a0;
  double lambda = 0;            // mean of the per-species ratios
  double offdiag_residual = 0;  // max_{i!=j} |Gamma_ij|
  double ratio_residual = 0;    // max_i |mean_rate_i/Gamma_ii - lambda|
  bool holds = false;
  bool manifold = false;        // solutions form a manifold through a0
};

FrameCertificate check_frame(const Ensemble& ens, double tol = 1e-9);
FrameCertificate check_frame(const RateFamily& fam, const Vec& a, double tol = 1e-9);

// Damped Gauss-Newton on the residual system {Gamma_ij = 0 (i<j),
// ratio_i - ratio_n = 0} over densities, started at a_init. Sets `manifold`
// when the Jacobian at the solution is rank-deficient (the condition then
// holds on a curve/surface through the solution, not an isolated point).
// Throws DomainError when a_init is not an achievable density and
// NumericalError when the iteration fails to converge.
FrameCertificate solve_frame(const RateFamily& fam, const Vec& a_init, double tol = 1e-9);

// Variance-minus-mean of the color-blind scalar marginal at density rho.
// For colored splits g_i(k) = g(|k|) k_i/|k|, the common-speed condition
// holds exactly on the surface {sum_i a_i = rho} at roots of this function.
double multicolor_balance(const std::function<double(int)>& g, int cap, double rho);

// Closed-form frame point of the tilted two-species walk at total fugacity 1:
// phi2 = 1 - phi1 and y = x(phi1 - 1)/(phi1 + x/e) make the covariance
// diagonal with Gamma = diag(e phi1, e phi2)/Z, Z = e + x phi1 + y phi2,
// densities a = (phi1(e+x), phi2(e+y))/Z, and speed lambda = Z/e.
struct TiltedWalkFrame {
  double phi2 = 0, y = 0, Z = 0, lambda = 0;
  Vec a0, gamma_diag;
};
TiltedWalkFrame tilted_walk_frame(double phi1, double x);

}  // namespace zrp
