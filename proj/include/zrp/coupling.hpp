#pragma once

#include "zrp/ensemble.hpp"

#include <string>
#include <vector>

namespace zrp {

// Quadratic coupling constants of the limiting equations at a common-speed
// density point. gamma_raw[i](j,l) is the density Hessian of the mean rate;
// gamma_norm[i](j,l) = (c / lambda^{3/2}) (q_j q_l / q_i) gamma_raw[i](j,l)
// with q_i = sqrt(mean_rate_i(a0)). The normalized tensor is symmetric under
// every permutation of (i,j,l); trilinear_residual measures the violation.
struct CouplingTensor {
  int n = 0;
  double lambda = 0;  // common speed at the build point
  double c = 0;       // asymmetry strength
  Vec a0;             // density point
  Vec q;              // q_i = sqrt(mean_rate_i(a0))
  std::vector<Mat> gamma_raw;   // [i](j,l) = d^2 mean_rate_i / d a_j d a_l
  std::vector<Mat> gamma_norm;  // [i](j,l) normalized coupling constant

  double operator()(int i, int j, int l) const { return gamma_norm[static_cast<size_t>(i)](j, l); }
};

// Builds the tensor at the ensemble's density. The normalization presumes a
// single speed, so the common-speed certificate must hold within fc_tol
// (DomainError otherwise; the default leaves room for numerically solved
// frame points). With fd_check, the closed-form Hessian is verified against
// Richardson-extrapolated central differences of the density -> mean-rate
// map to max(1e-6, 1e-4 |value|); disagreement raises NumericalError.
CouplingTensor build_tensor(const Ensemble& ens, double c, double fc_tol = 1e-7,
                            bool fd_check = true);
CouplingTensor build_tensor(const RateFamily& fam, const Vec& a0, double c, double fc_tol = 1e-7,
                            bool fd_check = true);

// max over (i,j,l) of |T^i_{jl} - T^i_{lj}| and |T^i_{jl} - T^j_{il}|.
double trilinear_residual(const CouplingTensor& t);

// (sigma o T)^i_{jl} = sum_{i',j',l'} sigma_{ii'} T^{i'}_{j'l'} sigma_{jj'}
// sigma_{ll'}; sigma must be orthogonal within 1e-12 (DomainError otherwise).
// Only gamma_norm transports this way; the rotated tensor carries empty
// gamma_raw, a0 and q, which have no meaning in the rotated coordinates.
CouplingTensor rotate_tensor(const Mat& sigma, const CouplingTensor& t);

// ---- two-species decoupling scan ----

// Off-diagonal entries of the rotated tensor at angle psi, in closed form
// for tensors with the trilinear symmetry:
//   decouple_F = (sigma_psi o T)^1_{12},  decouple_G = (sigma_psi o T)^2_{12},
// where sigma_psi = [[cos psi, -sin psi], [sin psi, cos psi]]. Reflected
// orthogonal matrices yield the same two conditions, so this pair covers
// every 2x2 orthogonal change of components.
double decouple_F(const CouplingTensor& t, double psi);
double decouple_G(const CouplingTensor& t, double psi);

struct DecoupleScan {
  Vec psi;                    // uniform grid over [0, 2 pi], endpoints included
  Vec F, G;                   // off-diagonal obstructions along the grid
  double min_max_margin = 0;  // min over the grid of max(|F|, |G|)
  double margin_psi = 0;      // where that minimum is attained
  std::vector<double> f_zeros;          // bisection-refined roots of F
  bool partially_decoupleable = false;  // F vanishes somewhere; guaranteed for
                                        // trilinear tensors since F(0) = -F(pi)
  bool fully_decoupleable = false;      // |G| < 1e-9 at some root of F
  std::string classification;           // "fully decoupleable" or "not fully decoupleable"
};

// Evaluates F and G on grid_size points, brackets every sign change of F,
// refines the roots by bisection, and tests |G| at each root. Requires two
// species; grid_size < 16 raises DomainError.
DecoupleScan decouple_scan(const CouplingTensor& t, int grid_size = 10000);

// ---- colored-split reduced coefficients ----

// Coefficient pack of the reduced system for the colored split of a scalar
// rate g at total density rho: component i feels c1 * Laplacian, the squared
// gradient of the summed field times c2 * a0_i, and an independent noise
// scaled by c3 * sqrt(a0_i). `balance` (variance - mean of the scalar
// marginal) vanishes exactly where the common-speed condition holds on the
// whole density simplex, and `nonlinearity` (third cumulant - variance)
// vanishes exactly where d2phi does, killing the quadratic term.
struct MultiColorCoefficients {
  double rho = 0;           // total density
  double phi = 0;           // mean jump rate of the scalar marginal
  double dphi = 0;          // d phi / d rho
  double d2phi = 0;         // d^2 phi / d rho^2
  double balance = 0;       // variance - mean
  double nonlinearity = 0;  // third cumulant - variance
  double c1 = 0;            // phi / (2 rho)
  double c2 = 0;            // c * d2phi / rho
  double c3 = 0;            // sqrt(phi / rho)
};

MultiColorCoefficients multicolor_coefficients(const std::function<double(int)>& g, int cap,
                                               double rho, double c);

}  // namespace zrp
