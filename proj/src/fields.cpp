#include "zrp/fields.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace zrp {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(kTwoPi); }

double wrap01(double u) { return u - std::floor(u); }

// Integral of exp(-i theta s) over [t1, t1 + dt], stable for small theta*dt.
std::complex<double> phase_integral(double theta, double t1, double dt) {
  const double x = theta * dt;
  std::complex<double> q;
  if (x == 0.0) {
    q = 1.0;
  } else if (std::abs(x) < 1e-4) {
    q = std::complex<double>(1.0 - x * x / 6.0, -x / 2.0 + x * x * x / 24.0);
  } else {
    const double h = std::sin(0.5 * x);
    q = std::complex<double>(std::sin(x) / x, -2.0 * h * h / x);
  }
  return std::polar(1.0, -theta * t1) * q * dt;
}

}  // namespace

// ---- test functions ----

namespace {

void fill_difference_caches(TestFunction& f) {
  const int N = f.N;
  f.grad_n.resize(static_cast<size_t>(N));
  f.lap_n.resize(static_cast<size_t>(N));
  for (int x = 0; x < N; ++x) {
    const double hp = f.values[static_cast<size_t>((x + 1) % N)];
    const double hm = f.values[static_cast<size_t>((x + N - 1) % N)];
    const double h0 = f.values[static_cast<size_t>(x)];
    f.grad_n[static_cast<size_t>(x)] = 0.5 * N * (hp - hm);
    f.lap_n[static_cast<size_t>(x)] = static_cast<double>(N) * N * (hp + hm - 2.0 * h0);
  }
}

double mollifier_value(double u, double eps) {
  // Periodic image sum of the smoothed indicator, centered at 0.
  const double sigma = eps / 8.0;
  double out = 0;
  for (int m = -1; m <= 1; ++m) {
    const double w = u - std::round(u) + m;
    out += (normal_cdf((w + 0.5 * eps) / sigma) - normal_cdf((w - 0.5 * eps) / sigma)) / eps;
  }
  return out;
}

double mollifier_deriv(double u, double eps) {
  const double sigma = eps / 8.0;
  double out = 0;
  for (int m = -1; m <= 1; ++m) {
    const double w = u - std::round(u) + m;
    out += (normal_pdf((w + 0.5 * eps) / sigma) - normal_pdf((w - 0.5 * eps) / sigma)) / (eps * sigma);
  }
  return out;
}

}  // namespace

TestFunction TestFunction::fourier(int N, int k, bool sine) {
  if (N < 2) throw DomainError("resolution must be >= 2");
  TestFunction f;
  f.kind = sine ? Kind::fourier_sin : Kind::fourier_cos;
  f.N = N;
  f.k = k;
  f.values.resize(static_cast<size_t>(N));
  for (int x = 0; x < N; ++x) {
    const double th = kTwoPi * k * x / N;
    f.values[static_cast<size_t>(x)] = sine ? std::sin(th) : std::cos(th);
  }
  fill_difference_caches(f);
  return f;
}

TestFunction TestFunction::mollifier(int N, double eps) {
  if (N < 2) throw DomainError("resolution must be >= 2");
  if (!(eps > 0.0 && eps <= 0.5)) throw DomainError("mollifier width must lie in (0, 1/2]");
  TestFunction f;
  f.kind = Kind::mollifier;
  f.N = N;
  f.eps = eps;
  f.values.resize(static_cast<size_t>(N));
  for (int x = 0; x < N; ++x) f.values[static_cast<size_t>(x)] = mollifier_value(static_cast<double>(x) / N, eps);
  fill_difference_caches(f);
  return f;
}

TestFunction TestFunction::custom(std::vector<double> values) {
  if (values.size() < 2) throw DomainError("need at least 2 samples");
  TestFunction f;
  f.kind = Kind::custom;
  f.N = static_cast<int>(values.size());
  f.values = std::move(values);
  fill_difference_caches(f);
  return f;
}

double TestFunction::eval(double u) const {
  switch (kind) {
    case Kind::fourier_cos:
      return std::cos(kTwoPi * k * u);
    case Kind::fourier_sin:
      return std::sin(kTwoPi * k * u);
    case Kind::mollifier:
      return mollifier_value(u, eps);
    case Kind::custom: {
      const double p = wrap01(u) * N;
      const int x = static_cast<int>(p);
      const double w = p - x;
      return (1.0 - w) * values[static_cast<size_t>(x % N)] + w * values[static_cast<size_t>((x + 1) % N)];
    }
  }
  return 0;
}

double TestFunction::deriv(double u) const {
  switch (kind) {
    case Kind::fourier_cos:
      return -kTwoPi * k * std::sin(kTwoPi * k * u);
    case Kind::fourier_sin:
      return kTwoPi * k * std::cos(kTwoPi * k * u);
    case Kind::mollifier:
      return mollifier_deriv(u, eps);
    case Kind::custom: {
      const double p = wrap01(u) * N;
      const int x = static_cast<int>(p);
      const double w = p - x;
      return (1.0 - w) * grad_n[static_cast<size_t>(x % N)] + w * grad_n[static_cast<size_t>((x + 1) % N)];
    }
  }
  return 0;
}

double TestFunction::l2() const {
  double s = 0;
  for (double v : values) s += v * v;
  return s / N;
}

double TestFunction::grad_l2() const {
  double s = 0;
  for (double v : grad_n) s += v * v;
  return s / N;
}

double traveling_shift(double c, double lambda, double t, int N, double gamma) {
  return std::floor(2.0 * c * lambda * t * N * N / std::pow(static_cast<double>(N), gamma)) / N;
}

Vec eval_field(const Lattice& lat, const TestFunction& H, const Vec& a0, double shift) {
  const int N = lat.size(), n = lat.n_species();
  if (H.N != N) throw DomainError("test function resolution does not match the lattice");
  if (a0.size() != n) throw DomainError("density dimension mismatch");
  Vec out = Vec::Zero(n);
  for (int x = 0; x < N; ++x) {
    const double h = H.eval(static_cast<double>(x) / N - shift);
    for (int i = 0; i < n; ++i) out[i] += h * (lat.occupancy(x, i) - a0[i]);
  }
  return out / std::sqrt(static_cast<double>(N));
}

// ---- event-exact field decomposition ----

FieldAccumulator::FieldAccumulator(FieldSetup setup, const Lattice& start) : s_(std::move(setup)) {
  N_ = start.size();
  n_ = start.n_species();
  nm_ = static_cast<int>(s_.modes.size());
  if (s_.a0.size() != n_ || s_.gtilde.size() != n_)
    throw DomainError("density/rate dimension mismatch");
  if (s_.grad_gtilde.rows() != n_ || s_.grad_gtilde.cols() != n_)
    throw DomainError("rate Jacobian must be n x n");
  if (nm_ == 0) throw DomainError("need at least one tracked mode");
  for (int k : s_.modes)
    if (k < 1 || 2 * k >= N_) throw DomainError("tracked wavenumbers need 0 < 2k < N");

  inv_sqrt_n_ = 1.0 / std::sqrt(static_cast<double>(N_));
  asym_ = 2.0 * s_.c * std::pow(static_cast<double>(N_), 1.0 - s_.gamma);
  v_ = s_.traveling ? 2.0 * s_.c * s_.lambda * std::pow(static_cast<double>(N_), 1.0 - s_.gamma) : 0.0;

  cexp_.resize(static_cast<size_t>(nm_));
  omega_.resize(static_cast<size_t>(nm_));
  sym_coeff_.resize(static_cast<size_t>(nm_));
  lap_coeff_.resize(static_cast<size_t>(nm_));
  grad_coeff_.resize(static_cast<size_t>(nm_));
  pd2_.resize(static_cast<size_t>(nm_));
  const double bias = s_.c / std::pow(static_cast<double>(N_), s_.gamma);
  for (int m = 0; m < nm_; ++m) {
    const int k = s_.modes[static_cast<size_t>(m)];
    const double w = kTwoPi * k;
    omega_[static_cast<size_t>(m)] = w;
    const double half = std::sin(0.5 * w / N_);
    lap_coeff_[static_cast<size_t>(m)] = 0.5 * (-4.0 * N_ * static_cast<double>(N_) * half * half);
    grad_coeff_[static_cast<size_t>(m)] = asym_ * std::complex<double>(0.0, N_ * std::sin(w / N_));
    sym_coeff_[static_cast<size_t>(m)] = N_ * (1.0 - std::cos(w / N_));
    auto e = [&](double th) { return std::complex<double>(std::cos(th), 0) +
                                     std::complex<double>(0, 2.0 * bias * std::sin(th)); };
    pd2_[static_cast<size_t>(m)] = e(2.0 * w / N_) - 2.0 * e(w / N_) + 1.0;
    cexp_[static_cast<size_t>(m)].resize(static_cast<size_t>(N_));
    for (int x = 0; x < N_; ++x)
      cexp_[static_cast<size_t>(m)][static_cast<size_t>(x)] = std::polar(1.0, kTwoPi * k * x / static_cast<double>(N_));
  }

  auto zeros = [&] { return std::vector<std::vector<Cd>>(static_cast<size_t>(nm_), std::vector<Cd>(static_cast<size_t>(n_), Cd(0, 0))); };
  A_ = zeros();
  G_ = zeros();
  G2_ = zeros();
  S_.assign(static_cast<size_t>(n_), 0.0);
  int_lap_ = zeros();
  int_grad_ = zeros();
  int_frame_ = zeros();
  osc_ = zeros();
  sym_.assign(static_cast<size_t>(nm_), std::vector<double>(static_cast<size_t>(n_), 0.0));
  rqv_cos_ = sym_;
  rqv_sin_ = sym_;
  t_prev_ = start.time();
  init_sums(start, false);

  series_.N = N_;
  series_.n = n_;
  series_.modes = s_.modes;
  series_.frame_speed = v_;
  series_.y0.assign(static_cast<size_t>(nm_), std::vector<Cd>(static_cast<size_t>(n_)));
  for (int m = 0; m < nm_; ++m)
    for (int i = 0; i < n_; ++i)
      series_.y0[static_cast<size_t>(m)][static_cast<size_t>(i)] =
          inv_sqrt_n_ * std::polar(1.0, -omega_[static_cast<size_t>(m)] * v_ * t_prev_) * A_[static_cast<size_t>(m)][static_cast<size_t>(i)];
  auto empty3 = [&] { return std::vector<std::vector<std::vector<Cd>>>(static_cast<size_t>(nm_), std::vector<std::vector<Cd>>(static_cast<size_t>(n_))); };
  series_.y = empty3();
  series_.lap = empty3();
  series_.grad = empty3();
  series_.frame = empty3();
  auto empty3d = [&] { return std::vector<std::vector<std::vector<double>>>(static_cast<size_t>(nm_), std::vector<std::vector<double>>(static_cast<size_t>(n_))); };
  series_.qv_cos = empty3d();
  series_.qv_sin = empty3d();
  series_.rqv_cos = empty3d();
  series_.rqv_sin = empty3d();
  series_.cross_cos.assign(static_cast<size_t>(nm_), Mat::Zero(n_, n_));
  series_.cross_sin.assign(static_cast<size_t>(nm_), Mat::Zero(n_, n_));
}

void FieldAccumulator::init_sums(const Lattice& lat, bool audit) {
  if (lat.size() != N_ || lat.n_species() != n_) throw DomainError("lattice does not match the accumulator");
  auto fresh_a = A_;
  auto fresh_g = G_;
  auto fresh_g2 = G2_;
  std::vector<double> fresh_s(static_cast<size_t>(n_), 0.0);
  for (auto& per : fresh_a)
    for (auto& c : per) c = Cd(0, 0);
  for (auto& per : fresh_g)
    for (auto& c : per) c = Cd(0, 0);
  for (auto& per : fresh_g2)
    for (auto& c : per) c = Cd(0, 0);

  const RateFamily& fam = lat.rates();
  for (int x = 0; x < N_; ++x) {
    const int32_t* kx = lat.site(x);
    for (int i = 0; i < n_; ++i) {
      const double g = kx[i] > 0 ? fam.rate(i, kx) : 0.0;
      fresh_s[static_cast<size_t>(i)] += g;
      for (int m = 0; m < nm_; ++m) {
        const Cd p = cexp_[static_cast<size_t>(m)][static_cast<size_t>(x)];
        const Cd p2 = cexp_[static_cast<size_t>(m)][static_cast<size_t>((2 * x) % N_)];
        fresh_a[static_cast<size_t>(m)][static_cast<size_t>(i)] += (kx[i] - s_.a0[i]) * p;
        fresh_g[static_cast<size_t>(m)][static_cast<size_t>(i)] += g * p;
        fresh_g2[static_cast<size_t>(m)][static_cast<size_t>(i)] += g * p2;
      }
    }
  }

  if (audit) {
    double worst = 0;
    for (int m = 0; m < nm_; ++m)
      for (int i = 0; i < n_; ++i) {
        const auto mi = [&](const auto& v) -> const Cd& { return v[static_cast<size_t>(m)][static_cast<size_t>(i)]; };
        worst = std::max(worst, std::abs(mi(fresh_a) - mi(A_)));
        worst = std::max(worst, std::abs(mi(fresh_g) - mi(G_)));
        worst = std::max(worst, std::abs(mi(fresh_g2) - mi(G2_)));
      }
    for (int i = 0; i < n_; ++i)
      worst = std::max(worst, std::abs(fresh_s[static_cast<size_t>(i)] - S_[static_cast<size_t>(i)]));
    double scale = 1.0;
    for (int i = 0; i < n_; ++i) scale = std::max(scale, std::abs(fresh_s[static_cast<size_t>(i)]));
    if (worst > 1e-6 * scale) throw NumericalError("field accumulator sums drifted beyond tolerance");
  }
  A_ = std::move(fresh_a);
  G_ = std::move(fresh_g);
  G2_ = std::move(fresh_g2);
  S_ = std::move(fresh_s);
}

void FieldAccumulator::integrate_to(double t) {
  const double dt = t - t_prev_;
  if (dt <= 0) {
    t_prev_ = t;
    return;
  }
  for (int m = 0; m < nm_; ++m) {
    const size_t mm = static_cast<size_t>(m);
    const double w = omega_[mm];
    const Cd pv = phase_integral(w * v_, t_prev_, dt);
    const Cd p2v = phase_integral(2.0 * w * v_, t_prev_, dt);
    for (int i = 0; i < n_; ++i) {
      const size_t ii = static_cast<size_t>(i);
      Cd da(0, 0);
      for (int j = 0; j < n_; ++j) da += s_.grad_gtilde(i, j) * A_[mm][static_cast<size_t>(j)];
      int_lap_[mm][ii] += inv_sqrt_n_ * lap_coeff_[mm] * G_[mm][ii] * pv;
      int_grad_[mm][ii] += inv_sqrt_n_ * grad_coeff_[mm] * (G_[mm][ii] - da) * pv;
      int_frame_[mm][ii] += inv_sqrt_n_ * (grad_coeff_[mm] * da - Cd(0, w * v_) * A_[mm][ii]) * pv;
      sym_[mm][ii] += sym_coeff_[mm] * S_[ii] * dt;
      osc_[mm][ii] += 0.5 * N_ * pd2_[mm] * G2_[mm][ii] * p2v;
    }
  }
  t_prev_ = t;
}

void FieldAccumulator::apply_event(const Event& e) {
  integrate_to(e.t);
  for (int m = 0; m < nm_; ++m) {
    const size_t mm = static_cast<size_t>(m);
    const Cd px = cexp_[mm][static_cast<size_t>(e.x)];
    const Cd py = cexp_[mm][static_cast<size_t>(e.y)];
    const Cd px2 = cexp_[mm][static_cast<size_t>((2 * e.x) % N_)];
    const Cd py2 = cexp_[mm][static_cast<size_t>((2 * e.y) % N_)];
    A_[mm][static_cast<size_t>(e.species)] += py - px;
    for (int j = 0; j < n_; ++j) {
      const size_t jj = static_cast<size_t>(j);
      G_[mm][jj] += (e.gx_new[j] - e.gx_old[j]) * px + (e.gy_new[j] - e.gy_old[j]) * py;
      G2_[mm][jj] += (e.gx_new[j] - e.gx_old[j]) * px2 + (e.gy_new[j] - e.gy_old[j]) * py2;
    }
    const Cd dy = inv_sqrt_n_ * std::polar(1.0, -omega_[mm] * v_ * e.t) * (py - px);
    const double re = dy.real(), im = dy.imag();
    rqv_cos_[mm][static_cast<size_t>(e.species)] += re * re;
    rqv_sin_[mm][static_cast<size_t>(e.species)] += im * im;
    series_.cross_cos[mm](e.species, e.species) += re * re;
    series_.cross_sin[mm](e.species, e.species) += im * im;
  }
  for (int j = 0; j < n_; ++j)
    S_[static_cast<size_t>(j)] += (e.gx_new[j] - e.gx_old[j]) + (e.gy_new[j] - e.gy_old[j]);
}

void FieldAccumulator::record(double t, const Lattice& lat) {
  integrate_to(t);
  init_sums(lat, true);
  series_.times.push_back(t);
  for (int m = 0; m < nm_; ++m) {
    const size_t mm = static_cast<size_t>(m);
    const Cd ph = std::polar(1.0, -omega_[mm] * v_ * t);
    for (int i = 0; i < n_; ++i) {
      const size_t ii = static_cast<size_t>(i);
      series_.y[mm][ii].push_back(inv_sqrt_n_ * ph * A_[mm][ii]);
      series_.lap[mm][ii].push_back(int_lap_[mm][ii]);
      series_.grad[mm][ii].push_back(int_grad_[mm][ii]);
      series_.frame[mm][ii].push_back(int_frame_[mm][ii]);
      series_.qv_cos[mm][ii].push_back(sym_[mm][ii] + osc_[mm][ii].real());
      series_.qv_sin[mm][ii].push_back(sym_[mm][ii] - osc_[mm][ii].real());
      series_.rqv_cos[mm][ii].push_back(rqv_cos_[mm][ii]);
      series_.rqv_sin[mm][ii].push_back(rqv_sin_[mm][ii]);
    }
  }
}

// ---- mollified quadratic field ----

Vec mollified_quadratic(const Lattice& lat, const TestFunction& H, const Vec& a0,
                        const std::vector<Mat>& hess, double eps, double shift) {
  const int N = lat.size(), n = lat.n_species();
  if (eps < 2.0 / N) throw DomainError("mollifier under-resolved");
  if (H.N != N) throw DomainError("test function resolution does not match the lattice");
  if (a0.size() != n || static_cast<int>(hess.size()) != n)
    throw DomainError("density/Hessian dimension mismatch");
  for (const Mat& h : hess)
    if (h.rows() != n || h.cols() != n) throw DomainError("each Hessian must be n x n");

  const TestFunction G = TestFunction::mollifier(N, eps);
  const double isn = 1.0 / std::sqrt(static_cast<double>(N));

  Mat ybar(n, N);  // smoothed centered fields at each lattice offset
  for (int z = 0; z < N; ++z)
    for (int i = 0; i < n; ++i) {
      double s = 0;
      for (int x = 0; x < N; ++x) s += G((x - z + N) % N) * (lat.occupancy(x, i) - a0[i]);
      ybar(i, z) = isn * s;
    }

  Vec out = Vec::Zero(n);
  for (int z = 0; z < N; ++z) {
    const double w = H.deriv(static_cast<double>(z) / N - shift);
    if (w == 0.0) continue;
    for (int i = 0; i < n; ++i) {
      double q = 0;
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) q += hess[static_cast<size_t>(i)](j, k) * ybar(j, z) * ybar(k, z);
      out[i] += w * q;
    }
  }
  return out / N;
}

// ---- replica statistics ----

StructureFactor structure_factor(const std::vector<FieldSeries>& replicas, int mode, bool sine) {
  const int M = static_cast<int>(replicas.size());
  if (M < 2) throw DomainError("need at least 2 replicas");
  const FieldSeries& first = replicas.front();
  if (mode < 0 || mode >= static_cast<int>(first.modes.size())) throw DomainError("mode index out of range");
  const int R = static_cast<int>(first.times.size());
  const int n = first.n;
  for (const FieldSeries& s : replicas)
    if (s.n != n || s.times != first.times || s.modes != first.modes)
      throw DomainError("replica series do not line up");

  StructureFactor out;
  out.times = first.times;
  out.n = n;
  out.low_replicas = M < 50;
  out.C.assign(static_cast<size_t>(n), std::vector<Mat>(static_cast<size_t>(n), Mat::Zero(R, R)));
  out.SE = out.C;

  std::vector<Mat> comp(static_cast<size_t>(M), Mat(n, R));
  for (int r = 0; r < M; ++r)
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < R; ++t) {
        const std::complex<double> v = replicas[static_cast<size_t>(r)].y[static_cast<size_t>(mode)][static_cast<size_t>(i)][static_cast<size_t>(t)];
        comp[static_cast<size_t>(r)](i, t) = sine ? v.imag() : v.real();
      }

  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      Mat sum = Mat::Zero(R, R), sumsq = Mat::Zero(R, R);
      for (int r = 0; r < M; ++r) {
        const Mat o = comp[static_cast<size_t>(r)].row(i).transpose() * comp[static_cast<size_t>(r)].row(j);
        sum += o;
        sumsq += o.cwiseProduct(o);
      }
      const Mat mean = sum / M;
      // Leave-one-out error of the replica mean.
      const Mat var = (sumsq - M * mean.cwiseProduct(mean)) / (M - 1);
      out.C[static_cast<size_t>(i)][static_cast<size_t>(j)] = mean;
      out.SE[static_cast<size_t>(i)][static_cast<size_t>(j)] = (var / M).cwiseMax(0.0).cwiseSqrt();
    }
  return out;
}

}  // namespace zrp
