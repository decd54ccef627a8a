#include "zrp/frame.hpp"

#include <cmath>

namespace zrp {

FrameCertificate check_frame(const Ensemble& ens, double tol) {
  const int n = ens.n_species();
  FrameCertificate cert;
  cert.a0 = ens.density();
  const Mat& G = ens.covariance();
  Vec gbar = ens.mean_rate();

  Vec ratio(n);
  for (int i = 0; i < n; ++i) ratio[i] = gbar[i] / G(i, i);
  cert.lambda = ratio.mean();
  cert.ratio_residual = (ratio.array() - cert.lambda).abs().maxCoeff();
  cert.offdiag_residual = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) cert.offdiag_residual = std::max(cert.offdiag_residual, std::abs(G(i, j)));
  cert.holds = cert.offdiag_residual < tol && cert.ratio_residual < tol;
  return cert;
}

FrameCertificate check_frame(const RateFamily& fam, const Vec& a, double tol) {
  return check_frame(Ensemble(fam, Ensemble::fugacity_of_density(fam, a)), tol);
}

namespace {

// residuals: Gamma_ij for i<j, then ratio_i - ratio_{n-1} for i<n-1
Vec frame_residual(const RateFamily& fam, const Vec& a) {
  Ensemble ens(fam, Ensemble::fugacity_of_density(fam, a));
  const int n = ens.n_species();
  const Mat& G = ens.covariance();
  Vec gbar = ens.mean_rate();
  Vec r(n * (n - 1) / 2 + (n - 1));
  int t = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) r[t++] = G(i, j);
  double last = gbar[n - 1] / G(n - 1, n - 1);
  for (int i = 0; i + 1 < n; ++i) r[t++] = gbar[i] / G(i, i) - last;
  return r;
}

}  // namespace

FrameCertificate solve_frame(const RateFamily& fam, const Vec& a_init, double tol) {
  const int n = fam.n_species();
  if (n < 2) throw DomainError("solve_frame: needs at least two species");

  Vec a = a_init;
  Vec r;
  try {
    r = frame_residual(fam, a);
  } catch (const NumericalError& e) {
    throw DomainError(std::string("solve_frame: initial density not achievable: ") + e.what());
  }

  const int m = static_cast<int>(r.size());
  Mat J(m, n);
  auto jacobian = [&](const Vec& at) {
    for (int j = 0; j < n; ++j) {
      double h = 1e-6 * std::max(std::abs(at[j]), 1e-2);
      Vec ap = at, am = at;
      ap[j] += h;
      am[j] = std::max(am[j] - h, 1e-12);
      J.col(j) = (frame_residual(fam, ap) - frame_residual(fam, am)) / (ap[j] - am[j]);
    }
  };

  double rn = r.cwiseAbs().maxCoeff();
  for (int it = 0; it < 60 && rn >= tol; ++it) {
    jacobian(a);
    Eigen::JacobiSVD<Mat> svd(J, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Vec step = -svd.solve(r);
    double s = 1.0;
    bool moved = false;
    while (s > 1e-10) {
      Vec cand = a + s * step;
      if (cand.minCoeff() > 0) {
        try {
          Vec rc = frame_residual(fam, cand);
          if (rc.cwiseAbs().maxCoeff() < rn) {
            a = cand;
            r = rc;
            rn = r.cwiseAbs().maxCoeff();
            moved = true;
            break;
          }
        } catch (const NumericalError&) {
          // candidate density not achievable; shorten the step
        }
      }
      s *= 0.5;
    }
    if (!moved) throw NumericalError("solve_frame: stalled at residual " + std::to_string(rn));
  }
  if (rn >= tol) throw NumericalError("solve_frame: no convergence, residual " + std::to_string(rn));

  FrameCertificate cert = check_frame(fam, a, tol);
  jacobian(a);
  Eigen::JacobiSVD<Mat> svd(J);
  double smax = svd.singularValues().maxCoeff();
  cert.manifold = smax < 1e-7 || svd.singularValues().minCoeff() < 1e-6 * smax;
  return cert;
}

double multicolor_balance(const std::function<double(int)>& g, int cap, double rho) {
  auto fam = RateFamily::multi_color(1, g, cap);
  Vec phi = Ensemble::fugacity_of_density(fam, Vec::Constant(1, rho));
  return Ensemble(fam, phi).covariance()(0, 0) - rho;
}

TiltedWalkFrame tilted_walk_frame(double phi1, double x) {
  if (!(phi1 > 0.0 && phi1 < 1.0)) throw DomainError("tilted_walk_frame: phi1 must lie in (0,1)");
  if (!(x > -1.0)) throw DomainError("tilted_walk_frame: x must exceed -1");
  const double e = std::exp(1.0);
  TiltedWalkFrame f;
  f.phi2 = 1.0 - phi1;
  f.y = x * (phi1 - 1.0) / (phi1 + x / e);
  if (f.y <= -1.0) throw DomainError("tilted_walk_frame: admissibility violated, y <= -1");
  f.Z = e + x * phi1 + f.y * f.phi2;
  f.lambda = f.Z / e;
  f.a0.resize(2);
  f.a0 << phi1 * (e + x) / f.Z, f.phi2 * (e + f.y) / f.Z;
  f.gamma_diag.resize(2);
  f.gamma_diag << e * phi1 / f.Z, e * f.phi2 / f.Z;
  return f;
}

}  // namespace zrp
