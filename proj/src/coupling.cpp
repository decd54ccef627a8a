#include "zrp/coupling.hpp"

#include "zrp/frame.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

namespace zrp {

namespace {

// ---- finite-difference cross-check of the closed-form Hessian ----

Vec rate_at_density(const RateFamily& fam, const Vec& a) {
  Vec phi = Ensemble::fugacity_of_density(fam, a);
  return Ensemble(fam, phi).mean_rate();
}

void fd_crosscheck(const RateFamily& fam, const Vec& a0, const std::vector<Mat>& hess) {
  const int n = static_cast<int>(a0.size());
  Vec f0 = rate_at_density(fam, a0);

  auto diag2 = [&](int j, double h) {
    Vec ap = a0, am = a0;
    ap[j] += h;
    am[j] -= h;
    return Vec(((rate_at_density(fam, ap) - 2.0 * f0 + rate_at_density(fam, am)) / (h * h)));
  };
  auto mixed2 = [&](int j, int l, double hj, double hl) {
    Vec app = a0, apm = a0, amp = a0, amm = a0;
    app[j] += hj;
    app[l] += hl;
    apm[j] += hj;
    apm[l] -= hl;
    amp[j] -= hj;
    amp[l] += hl;
    amm[j] -= hj;
    amm[l] -= hl;
    return Vec((rate_at_density(fam, app) - rate_at_density(fam, apm) - rate_at_density(fam, amp) +
                rate_at_density(fam, amm)) /
               (4.0 * hj * hl));
  };

  for (int j = 0; j < n; ++j)
    for (int l = j; l < n; ++l) {
      double hj = std::min(2e-2 * std::max(a0[j], 0.5), 0.45 * a0[j]);
      double hl = std::min(2e-2 * std::max(a0[l], 0.5), 0.45 * a0[l]);
      Vec coarse = (j == l) ? diag2(j, hj) : mixed2(j, l, hj, hl);
      Vec fine = (j == l) ? diag2(j, hj / 2) : mixed2(j, l, hj / 2, hl / 2);
      Vec rich = (4.0 * fine - coarse) / 3.0;  // kills the h^2 truncation term
      for (int i = 0; i < n; ++i) {
        double closed = hess[static_cast<size_t>(i)](j, l);
        double tol = std::max(1e-6, 1e-4 * std::abs(closed));
        if (std::abs(closed - rich[i]) > tol) {
          std::ostringstream msg;
          msg << "build_tensor: Hessian cross-check failed at (" << i << "," << j << "," << l
              << "): closed form " << closed << " vs finite difference " << rich[i];
          throw NumericalError(msg.str());
        }
      }
    }
}

}  // namespace

CouplingTensor build_tensor(const Ensemble& ens, double c, double fc_tol, bool fd_check) {
  FrameCertificate cert = check_frame(ens, fc_tol);
  if (!cert.holds) {
    std::ostringstream msg;
    msg << "build_tensor: common-speed condition violated at the density point (offdiag "
        << cert.offdiag_residual << ", ratio " << cert.ratio_residual << ", tol " << fc_tol << ")";
    throw DomainError(msg.str());
  }

  CouplingTensor t;
  t.n = ens.n_species();
  t.lambda = cert.lambda;
  t.c = c;
  t.a0 = ens.density();
  t.gamma_raw = ens.hess_mean_rate();
  if (fd_check) fd_crosscheck(ens.rates(), t.a0, t.gamma_raw);

  Vec gbar = ens.mean_rate();
  if (!(gbar.minCoeff() > 0.0)) throw DomainError("build_tensor: species with zero mean rate");
  t.q = gbar.array().sqrt().matrix();

  const double norm = c / std::pow(t.lambda, 1.5);
  t.gamma_norm.assign(static_cast<size_t>(t.n), Mat::Zero(t.n, t.n));
  for (int i = 0; i < t.n; ++i)
    for (int j = 0; j < t.n; ++j)
      for (int l = 0; l < t.n; ++l)
        t.gamma_norm[static_cast<size_t>(i)](j, l) =
            norm * t.q[j] * t.q[l] / t.q[i] * t.gamma_raw[static_cast<size_t>(i)](j, l);
  return t;
}

CouplingTensor build_tensor(const RateFamily& fam, const Vec& a0, double c, double fc_tol,
                            bool fd_check) {
  Vec phi = Ensemble::fugacity_of_density(fam, a0);
  return build_tensor(Ensemble(fam, phi), c, fc_tol, fd_check);
}

double trilinear_residual(const CouplingTensor& t) {
  double worst = 0.0;
  for (int i = 0; i < t.n; ++i)
    for (int j = 0; j < t.n; ++j)
      for (int l = 0; l < t.n; ++l) {
        worst = std::max(worst, std::abs(t(i, j, l) - t(i, l, j)));
        worst = std::max(worst, std::abs(t(i, j, l) - t(j, i, l)));
      }
  return worst;
}

CouplingTensor rotate_tensor(const Mat& sigma, const CouplingTensor& t) {
  if (sigma.rows() != t.n || sigma.cols() != t.n)
    throw DomainError("rotate_tensor: matrix size does not match the species count");
  double ortho = (sigma * sigma.transpose() - Mat::Identity(t.n, t.n)).cwiseAbs().maxCoeff();
  if (ortho > 1e-12) throw DomainError("rotate_tensor: matrix is not orthogonal");

  CouplingTensor out;
  out.n = t.n;
  out.lambda = t.lambda;
  out.c = t.c;
  out.gamma_norm.assign(static_cast<size_t>(t.n), Mat::Zero(t.n, t.n));
  for (int ip = 0; ip < t.n; ++ip) {
    Mat b = sigma * t.gamma_norm[static_cast<size_t>(ip)] * sigma.transpose();
    for (int i = 0; i < t.n; ++i) out.gamma_norm[static_cast<size_t>(i)] += sigma(i, ip) * b;
  }
  return out;
}

// ---- two-species decoupling scan ----

namespace {
void require_two_species(const CouplingTensor& t, const char* who) {
  if (t.n != 2) throw DomainError(std::string(who) + ": needs exactly two species");
}
}  // namespace

double decouple_F(const CouplingTensor& t, double psi) {
  require_two_species(t, "decouple_F");
  double cs = std::cos(psi), sn = std::sin(psi);
  return cs * cs * sn * t(0, 0, 0) + sn * sn * cs * t(1, 1, 1) +
         (cs * cs * cs - 2.0 * cs * sn * sn) * t(1, 0, 0) +
         (sn * sn * sn - 2.0 * sn * cs * cs) * t(0, 1, 1);
}

double decouple_G(const CouplingTensor& t, double psi) {
  require_two_species(t, "decouple_G");
  double cs = std::cos(psi), sn = std::sin(psi);
  return sn * sn * cs * t(0, 0, 0) - cs * cs * sn * t(1, 1, 1) +
         (2.0 * sn * cs * cs - sn * sn * sn) * t(1, 0, 0) +
         (cs * cs * cs - 2.0 * cs * sn * sn) * t(0, 1, 1);
}

DecoupleScan decouple_scan(const CouplingTensor& t, int grid_size) {
  require_two_species(t, "decouple_scan");
  if (grid_size < 16) throw DomainError("decouple_scan: grid_size must be at least 16");

  DecoupleScan out;
  out.psi.resize(grid_size);
  out.F.resize(grid_size);
  out.G.resize(grid_size);
  const double two_pi = 8.0 * std::atan(1.0);
  for (int k = 0; k < grid_size; ++k) {
    double psi = two_pi * k / (grid_size - 1);
    out.psi[k] = psi;
    out.F[k] = decouple_F(t, psi);
    out.G[k] = decouple_G(t, psi);
  }

  out.min_max_margin = std::numeric_limits<double>::infinity();
  for (int k = 0; k < grid_size; ++k) {
    double m = std::max(std::abs(out.F[k]), std::abs(out.G[k]));
    if (m < out.min_max_margin) {
      out.min_max_margin = m;
      out.margin_psi = out.psi[k];
    }
  }

  // roots of F: exact grid zeros plus bisection-refined sign changes
  for (int k = 0; k < grid_size; ++k) {
    if (out.F[k] == 0.0) {
      out.f_zeros.push_back(out.psi[k]);
      continue;
    }
    if (k + 1 < grid_size && out.F[k] * out.F[k + 1] < 0.0) {
      double lo = out.psi[k], hi = out.psi[k + 1];
      double flo = out.F[k];
      for (int it = 0; it < 80; ++it) {
        double mid = 0.5 * (lo + hi);
        double fm = decouple_F(t, mid);
        if (fm == 0.0) {
          lo = hi = mid;
          break;
        }
        if ((flo < 0.0) != (fm < 0.0))
          hi = mid;
        else {
          lo = mid;
          flo = fm;
        }
      }
      out.f_zeros.push_back(0.5 * (lo + hi));
    }
  }
  std::sort(out.f_zeros.begin(), out.f_zeros.end());
  out.f_zeros.erase(std::unique(out.f_zeros.begin(), out.f_zeros.end(),
                                [&](double a, double b) { return b - a < 0.5 * two_pi / grid_size; }),
                    out.f_zeros.end());

  out.partially_decoupleable = !out.f_zeros.empty();
  for (double z : out.f_zeros)
    if (std::abs(decouple_G(t, z)) < 1e-9) {
      out.fully_decoupleable = true;
      break;
    }
  out.classification = out.fully_decoupleable ? "fully decoupleable" : "not fully decoupleable";
  return out;
}

// ---- colored-split reduced coefficients ----

MultiColorCoefficients multicolor_coefficients(const std::function<double(int)>& g, int cap,
                                               double rho, double c) {
  RateFamily scalar = RateFamily::multi_color(1, g, cap);
  Vec a(1);
  a[0] = rho;
  Ensemble ens(scalar, Ensemble::fugacity_of_density(scalar, a));

  MultiColorCoefficients out;
  out.rho = rho;
  out.phi = ens.mean_rate()[0];
  out.dphi = ens.grad_mean_rate()(0, 0);
  out.d2phi = ens.hess_mean_rate()[0](0, 0);
  double var = ens.covariance()(0, 0);
  out.balance = var - rho;
  out.nonlinearity = ens.cumulant3(0, 0, 0) - var;
  out.c1 = 0.5 * out.phi / rho;
  out.c2 = c * out.d2phi / rho;
  out.c3 = std::sqrt(out.phi / rho);
  return out;
}

}  // namespace zrp
