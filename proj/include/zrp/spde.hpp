#pragma once

#include "zrp/coupling.hpp"
#include "zrp/rng.hpp"

#include <Eigen/Dense>

#include <complex>
#include <utility>
#include <vector>

namespace zrp {

// ---- spectral state of the limiting equations ----

// Fourier-side state of the n-species fluctuation field on the unit torus.
// coeff(i, k) is the complex amplitude of species i at wavenumber k for
// k = 0..n_modes; negative wavenumbers are the conjugates (real field).
// The linear drift matrix diag(mean_rate) * Gamma^{-1} shares eigenvalues
// with the symmetrized form A = Gamma^{-1/2} diag(mean_rate) Gamma^{-1/2},
// whose orthonormal eigenbasis diagonalizes the whole system; B maps the
// decoupled scalar components back to species coordinates.
struct SpectralState {
  int n = 0;        // species
  int n_modes = 0;  // largest retained wavenumber K
  double c = 0;     // asymmetry strength
  double dt = 0;    // preferred step size (metadata for drivers)
  double time = 0;

  Vec gtilde;            // per-species mean jump rate at the reference density
  Mat gamma;             // site covariance at the reference density
  Mat Q;                 // diag(gtilde) * gamma^{-1}
  Vec q;                 // noise amplitudes sqrt(gtilde)
  Mat gamma_half;        // symmetric square root of gamma
  Mat gamma_half_inv;    // its inverse
  Mat A;                 // gamma^{-1/2} diag(gtilde) gamma^{-1/2}
  Vec mu;                // eigenvalues of A, ascending; all positive
  Mat E;                 // orthonormal eigenvectors of A (columns)
  Mat B;                 // gamma_half * E: scalar components -> species
  Mat Binv;              // E^T * gamma_half_inv

  Eigen::MatrixXcd coeff;  // n x (n_modes + 1)
};

// Builds the state with zero coefficients. Validates gtilde > 0, gamma
// symmetric positive definite (1e-12 residuals), and positive eigenvalues
// of A; DomainError on bad sizes or cutoffs, NumericalError when the
// symmetry/positivity checks fail.
SpectralState make_spectral_state(const Vec& gtilde, const Mat& gamma, double c, int n_modes,
                                  double dt = 1e-5);
SpectralState make_spectral_state(const Ensemble& ens, double c, int n_modes, double dt = 1e-5);

// Draws coefficients from the stationary Gaussian law: each retained mode
// gets an independent complex Gaussian with species covariance gamma (the
// k = 0 amplitude is real). Pairing a cosine or sine readout with mode k
// gives variance gamma_ij / 2.
void sample_white_noise(SpectralState& s, Rng& rng);

// Advances every mode by the exact solution of the linear equations over
// dt: scalar component m at wavenumber k picks the deterministic factor
// exp(mu_m (-theta^2/2 + 2 i c theta) dt), theta = 2 pi k, plus a Gaussian
// stochastic-convolution increment of exact variance 1 - exp(-mu_m theta^2
// dt). rng == nullptr advances the deterministic semigroup only. The k = 0
// amplitudes never move (drift and noise both carry a spatial gradient).
void ou_exact_step(SpectralState& s, double dt, Rng* rng);

// Stationary space-time covariance of cosine-mode readouts of the linear
// equations: returns Cov(<Y_i(t + lag), H_k>, <Y_j(t), H_k>) with H_k the
// cosine at wavenumber k (sine gives the same value). lag >= 0.
double ou_correlation(const Vec& gtilde, const Mat& gamma, double c, int k, int i, int j,
                      double lag);

// One exponential-Euler step of the quadratic system: the linear part and
// noise are exactly those of ou_exact_step (an all-zero tensor reduces to
// it bitwise on a shared noise stream); the quadratic drift
//   c * sum_{jl} hess_i(j,l) * d/dx [ (G_eps * Y_j)(G_eps * Y_l) ]
// uses tensor.gamma_raw, evaluated pseudo-spectrally on a grid fine enough
// that retaining k <= n_modes is alias-free (2/3-style truncation), with a
// phi_1-weighted increment. eps below 2*pi/n_modes is rejected
// (DomainError); any amplitude above 1e6 after the step raises
// NumericalError with the offending mode in the message.
void burgers_step(SpectralState& s, const CouplingTensor& tensor, double eps, double dt,
                  Rng* rng);

// Collocation samples of the real fields on a uniform grid (row = species).
// The imaginary residual of the inverse transform lands in *imag_max when
// given; it is zero up to round-off for states evolved by the steppers.
Mat sample_real_field(const SpectralState& s, int grid, double* imag_max = nullptr);

// ---- component recombinations that decouple ----

// Linear map sending the n species components to the summed field followed
// by the antisymmetric differences a0_j * Y_i - a0_i * Y_j for i < j; at
// common-speed densities of colored splits these combinations evolve
// autonomously. Row 0 of L is all ones; row 1 + r matches pairs[r].
struct DecoupleMap {
  Mat L;  // (1 + n(n-1)/2) x n
  std::vector<std::pair<int, int>> pairs;
};
DecoupleMap decouple_transform(const Vec& a0);

}  // namespace zrp
