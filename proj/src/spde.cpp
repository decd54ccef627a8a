#include "zrp/spde.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>

namespace zrp {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

using Cd = std::complex<double>;

// (e^z - 1) / z, stable near the origin.
Cd phi1(Cd z) {
  if (std::abs(z) < 1e-6) return 1.0 + z / 2.0 + z * z / 6.0;
  return (std::exp(z) - 1.0) / z;
}

// Smallest power-of-two grid on which quadratic products of modes up to K
// cannot alias back into the retained band (the 2/3-rule margin).
int quadrature_grid(int K) {
  int m = 1;
  while (m < 3 * K + 1) m <<= 1;
  return m;
}

// Spectral factor of the mollifier: width-eps average smoothed by a
// Gaussian of deviation eps/8, evaluated at integer wavenumber k.
double mollifier_factor(double eps, int k) {
  if (k == 0) return 1.0;
  const double x = M_PI * k * eps;
  const double sigma = eps / 8.0;
  return std::sin(x) / x * std::exp(-2.0 * M_PI * M_PI * sigma * sigma * k * k);
}

void check_dt(double dt) {
  if (!(dt > 0) || !std::isfinite(dt)) throw DomainError("step size must be positive and finite");
}

// Exact linear update shared by both steppers; owns the noise-draw order.
void linear_step(SpectralState& s, double dt, Rng* rng) {
  check_dt(dt);
  const int K = s.n_modes, n = s.n;
  const Eigen::VectorXcd frozen = s.coeff.col(0);
  Mat zr = s.Binv * s.coeff.real();
  Mat zi = s.Binv * s.coeff.imag();
  for (int k = 1; k <= K; ++k) {
    const double th = kTwoPi * k;
    for (int m = 0; m < n; ++m) {
      const double decay = std::exp(-0.5 * s.mu[m] * th * th * dt);
      const Cd f = decay * std::polar(1.0, 2.0 * s.c * s.mu[m] * th * dt);
      Cd z(zr(m, k), zi(m, k));
      z *= f;
      if (rng) {
        const double sd = std::sqrt(0.5 * (1.0 - decay * decay));
        z += Cd(sd * rng->normal(), sd * rng->normal());
      }
      zr(m, k) = z.real();
      zi(m, k) = z.imag();
    }
  }
  s.coeff.real() = s.B * zr;
  s.coeff.imag() = s.B * zi;
  s.coeff.col(0) = frozen;  // gradient drift and gradient noise never move k = 0
  s.time += dt;
}

void check_blowup(const SpectralState& s) {
  for (int i = 0; i < s.n; ++i)
    for (int k = 0; k <= s.n_modes; ++k) {
      const double a = std::abs(s.coeff(i, k));
      if (!(a <= 1e6))
        throw NumericalError("amplitude blowup: species " + std::to_string(i) + ", wavenumber " +
                             std::to_string(k) + ", |amplitude| = " + std::to_string(a) +
                             " at t = " + std::to_string(s.time));
    }
}

}  // namespace

// ---- construction ----

SpectralState make_spectral_state(const Vec& gtilde, const Mat& gamma, double c, int n_modes,
                                  double dt) {
  const int n = static_cast<int>(gtilde.size());
  if (n < 1) throw DomainError("need at least one species");
  if (gamma.rows() != n || gamma.cols() != n) throw DomainError("covariance shape mismatch");
  if (n_modes < 1) throw DomainError("need at least one retained mode");
  check_dt(dt);
  for (int i = 0; i < n; ++i)
    if (!(gtilde[i] > 0)) throw DomainError("mean jump rates must be positive");
  const double gscale = std::max(1.0, gamma.cwiseAbs().maxCoeff());
  if ((gamma - gamma.transpose()).cwiseAbs().maxCoeff() > 1e-12 * gscale)
    throw NumericalError("covariance is not symmetric");

  SpectralState s;
  s.n = n;
  s.n_modes = n_modes;
  s.c = c;
  s.dt = dt;
  s.gtilde = gtilde;
  s.gamma = (gamma + gamma.transpose()) / 2.0;

  Eigen::SelfAdjointEigenSolver<Mat> gs(s.gamma);
  if (gs.eigenvalues().minCoeff() <= 0) throw NumericalError("covariance is not positive definite");
  const Vec root = gs.eigenvalues().cwiseSqrt();
  s.gamma_half = gs.eigenvectors() * root.asDiagonal() * gs.eigenvectors().transpose();
  s.gamma_half_inv =
      gs.eigenvectors() * root.cwiseInverse().asDiagonal() * gs.eigenvectors().transpose();

  s.Q = gtilde.asDiagonal() * s.gamma.inverse();
  s.q = gtilde.cwiseSqrt();

  Mat a = s.gamma_half_inv * gtilde.asDiagonal() * s.gamma_half_inv;
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff()))
    throw NumericalError("symmetrized diffusion matrix is not symmetric");
  s.A = (a + a.transpose()) / 2.0;
  Eigen::SelfAdjointEigenSolver<Mat> as(s.A);
  s.mu = as.eigenvalues();
  s.E = as.eigenvectors();
  if (s.mu.minCoeff() <= 0) throw NumericalError("diffusion matrix has a non-positive eigenvalue");
  s.B = s.gamma_half * s.E;
  s.Binv = s.E.transpose() * s.gamma_half_inv;

  s.coeff = Eigen::MatrixXcd::Zero(n, n_modes + 1);
  return s;
}

SpectralState make_spectral_state(const Ensemble& ens, double c, int n_modes, double dt) {
  return make_spectral_state(ens.mean_rate(), ens.covariance(), c, n_modes, dt);
}

void sample_white_noise(SpectralState& s, Rng& rng) {
  Vec z(s.n);
  for (int i = 0; i < s.n; ++i) z[i] = rng.normal();
  const Vec col0 = s.gamma_half * z;
  s.coeff.col(0) = col0.cast<Cd>();
  const double half = std::sqrt(0.5);
  Vec re(s.n), im(s.n);
  for (int k = 1; k <= s.n_modes; ++k) {
    for (int i = 0; i < s.n; ++i) {
      re[i] = half * rng.normal();
      im[i] = half * rng.normal();
    }
    const Vec cr = s.gamma_half * re;
    const Vec ci = s.gamma_half * im;
    for (int i = 0; i < s.n; ++i) s.coeff(i, k) = Cd(cr[i], ci[i]);
  }
  s.time = 0;
}

// ---- steppers ----

void ou_exact_step(SpectralState& s, double dt, Rng* rng) { linear_step(s, dt, rng); }

double ou_correlation(const Vec& gtilde, const Mat& gamma, double c, int k, int i, int j,
                      double lag) {
  if (k < 1) throw DomainError("wavenumber must be positive");
  if (!(lag >= 0) || !std::isfinite(lag)) throw DomainError("lag must be non-negative");
  const SpectralState s = make_spectral_state(gtilde, gamma, c, 1);
  if (i < 0 || j < 0 || i >= s.n || j >= s.n) throw DomainError("species index out of range");
  const double th = kTwoPi * k;
  double out = 0;
  for (int m = 0; m < s.n; ++m)
    out += s.B(i, m) * s.B(j, m) * std::exp(-0.5 * s.mu[m] * th * th * lag) *
           std::cos(2.0 * c * s.mu[m] * th * lag);
  return 0.5 * out;
}

void burgers_step(SpectralState& s, const CouplingTensor& tensor, double eps, double dt,
                  Rng* rng) {
  check_dt(dt);
  if (tensor.n != s.n) throw DomainError("coupling tensor species count mismatch");
  if (static_cast<int>(tensor.gamma_raw.size()) != s.n)
    throw DomainError("coupling tensor carries no density Hessians");
  if (!(eps >= kTwoPi / s.n_modes))
    throw DomainError("mollifier width below the spectral cutoff");

  bool zero = true;
  for (const Mat& h : tensor.gamma_raw)
    if (h.size() != 0 && h.cwiseAbs().maxCoeff() > 0) {
      zero = false;
      break;
    }
  if (zero) {
    linear_step(s, dt, rng);
    check_blowup(s);
    return;
  }

  const int K = s.n_modes, n = s.n;
  const int M = quadrature_grid(K);
  static thread_local Eigen::FFT<double> fft;

  // Collocation samples of the mollified fields.
  std::vector<Eigen::VectorXd> u(static_cast<size_t>(n));
  Eigen::VectorXcd spec(M), tbuf(M);
  for (int j = 0; j < n; ++j) {
    spec.setZero();
    spec[0] = s.coeff(j, 0);
    for (int k = 1; k <= K; ++k) {
      const Cd a = mollifier_factor(eps, k) * s.coeff(j, k);
      spec[k] = a;
      spec[M - k] = std::conj(a);
    }
    fft.inv(tbuf, spec);
    u[static_cast<size_t>(j)] = static_cast<double>(M) * tbuf.real();
  }

  // Quadratic drift coefficients in species coordinates, pre-step.
  Mat br = Mat::Zero(n, K + 1), bi = Mat::Zero(n, K + 1);
  Eigen::VectorXd w(M);
  Eigen::VectorXcd what(M);
  for (int i = 0; i < n; ++i) {
    const Mat& h = tensor.gamma_raw[static_cast<size_t>(i)];
    if (h.rows() != n || h.cols() != n) throw DomainError("density Hessian shape mismatch");
    w.setZero();
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < n; ++l)
        if (h(j, l) != 0)
          w.array() += h(j, l) * u[static_cast<size_t>(j)].array() * u[static_cast<size_t>(l)].array();
    fft.fwd(what, w);
    for (int k = 1; k <= K; ++k) {
      const Cd b = s.c * Cd(0.0, kTwoPi * k) * (what[k] / static_cast<double>(M));
      br(i, k) = b.real();
      bi(i, k) = b.imag();
    }
  }

  // Exact linear propagation and noise, then the phi_1-weighted drift.
  linear_step(s, dt, rng);

  Mat zbr = s.Binv * br, zbi = s.Binv * bi;
  Mat ir = Mat::Zero(n, K + 1), ii = Mat::Zero(n, K + 1);
  for (int k = 1; k <= K; ++k) {
    const double th = kTwoPi * k;
    for (int m = 0; m < n; ++m) {
      const Cd lam = s.mu[m] * Cd(-0.5 * th * th, 2.0 * s.c * th);
      const Cd inc = dt * phi1(lam * dt) * Cd(zbr(m, k), zbi(m, k));
      ir(m, k) = inc.real();
      ii(m, k) = inc.imag();
    }
  }
  s.coeff.real() += s.B * ir;
  s.coeff.imag() += s.B * ii;
  check_blowup(s);
}

// ---- diagnostics ----

Mat sample_real_field(const SpectralState& s, int grid, double* imag_max) {
  if (grid < 2 * s.n_modes + 1) throw DomainError("grid too coarse for the retained modes");
  static thread_local Eigen::FFT<double> fft;
  Mat out(s.n, grid);
  double worst = 0;
  Eigen::VectorXcd spec(grid), tbuf(grid);
  for (int i = 0; i < s.n; ++i) {
    spec.setZero();
    spec[0] = s.coeff(i, 0);
    for (int k = 1; k <= s.n_modes; ++k) {
      spec[k] = s.coeff(i, k);
      spec[grid - k] = std::conj(s.coeff(i, k));
    }
    fft.inv(tbuf, spec);
    out.row(i) = static_cast<double>(grid) * tbuf.real().transpose();
    worst = std::max(worst, static_cast<double>(grid) * tbuf.imag().cwiseAbs().maxCoeff());
    worst = std::max(worst, std::abs(s.coeff(i, 0).imag()));
  }
  if (imag_max) *imag_max = worst;
  return out;
}

DecoupleMap decouple_transform(const Vec& a0) {
  const int n = static_cast<int>(a0.size());
  if (n < 1) throw DomainError("need at least one species");
  DecoupleMap map;
  map.L = Mat::Zero(1 + n * (n - 1) / 2, n);
  map.L.row(0).setOnes();
  int r = 1;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      map.L(r, i) = a0[j];
      map.L(r, j) = -a0[i];
      map.pairs.emplace_back(i, j);
      ++r;
    }
  return map;
}

}  // namespace zrp
