#pragma once

#include "zrp/kmc.hpp"

#include <complex>
#include <vector>

namespace zrp {

// ---- test functions on the unit torus ----

// A test function tabulated at lattice resolution, together with its scaled
// discrete derivative caches: grad_n[x] = (N/2)(H((x+1)/N) - H((x-1)/N)) and
// lap_n[x] = N^2 (H((x+1)/N) + H((x-1)/N) - 2 H(x/N)).
struct TestFunction {
  enum class Kind { fourier_cos, fourier_sin, mollifier, custom };

  Kind kind = Kind::custom;
  int N = 0;
  int k = 0;        // wavenumber for the fourier kinds
  double eps = 0;   // width of the mollifier kind
  std::vector<double> values, grad_n, lap_n;

  double operator()(int x) const { return values[static_cast<size_t>(x)]; }
  double eval(double u) const;   // periodic; closed form for fourier/mollifier
  double deriv(double u) const;  // continuum derivative, same conventions
  double l2() const;             // (1/N) sum_x H(x/N)^2
  double grad_l2() const;        // (1/N) sum_x (grad_n[x])^2

  static TestFunction fourier(int N, int k, bool sine);
  // Indicator of width eps smoothed by a Gaussian of width eps/8; unit mass.
  static TestFunction mollifier(int N, double eps);
  static TestFunction custom(std::vector<double> values);
};

// Frame displacement floor(2 c lambda t N^2 / N^gamma) / N of the moving
// observation window at macroscopic time t.
double traveling_shift(double c, double lambda, double t, int N, double gamma);

// Y^i = N^{-1/2} sum_x H((x/N - shift) mod 1) (k^i(x) - a0^i).
Vec eval_field(const Lattice& lat, const TestFunction& H, const Vec& a0, double shift = 0.0);

// ---- event-exact field decomposition ----

// Per-mode accumulator configuration. With traveling = true, test functions
// ride along u - 2 c lambda N^{1-gamma} t; integrals between events then pick
// up closed-form phase factors, so the quadrature below is exact.
struct FieldSetup {
  std::vector<int> modes;  // wavenumbers, each with 0 < 2k < N
  Vec a0;                  // centering density
  Vec gtilde;              // mean jump rates at a0
  Mat grad_gtilde;         // d gtilde_i / d a^j at a0
  double c = 0;
  double gamma = 1;
  double lambda = 0;
  bool traveling = false;
};

// Time series of the field and its decomposition at the record times, per
// tracked mode and species. Complex entries pack the cosine mode in the real
// part and the sine mode in the imaginary part. "lap" integrates the scaled
// discrete Laplacian of the rates, "grad" the asymmetric gradient part with
// its density linearization removed, and "frame" the linearized transport
// plus the exact lattice-vs-continuum correction of the moving frame, so that
//   mart = y - y0 - lap - grad - frame
// is a martingale up to floating-point accumulation.
struct FieldSeries {
  int N = 0, n = 0;
  std::vector<int> modes;
  double frame_speed = 0;
  std::vector<double> times;
  std::vector<std::vector<std::complex<double>>> y0;                  // [mode][species]
  std::vector<std::vector<std::vector<std::complex<double>>>> y;     // [mode][species][record]
  std::vector<std::vector<std::vector<std::complex<double>>>> lap, grad, frame;
  std::vector<std::vector<std::vector<double>>> qv_cos, qv_sin;      // predictable brackets
  std::vector<std::vector<std::vector<double>>> rqv_cos, rqv_sin;    // realized squared jumps
  std::vector<Mat> cross_cos, cross_sin;  // realized cross brackets (final time)

  std::complex<double> mart(int m, int i, size_t r) const {
    return y[m][i][r] - y0[m][i] - lap[m][i][r] - grad[m][i][r] - frame[m][i][r];
  }
};

// Observer that maintains Fourier sums of occupancies and jump rates, updated
// in O(modes * n) per event, and integrates the decomposition exactly between
// events. At each record time the sums are recomputed from the lattice; a
// drift beyond 1e-6 trips an error.
class FieldAccumulator : public Observer {
 public:
  FieldAccumulator(FieldSetup setup, const Lattice& start);

  void apply_event(const Event& e) override;
  void record(double t, const Lattice& lat) override;

  const FieldSeries& series() const { return series_; }

 private:
  using Cd = std::complex<double>;
  void integrate_to(double t);
  void init_sums(const Lattice& lat, bool audit);

  FieldSetup s_;
  int N_ = 0, n_ = 0, nm_ = 0;
  double v_ = 0, asym_ = 0, inv_sqrt_n_ = 0;
  std::vector<std::vector<Cd>> cexp_;              // [mode][site] phase table
  std::vector<double> omega_, sym_coeff_;          // per mode
  std::vector<Cd> lap_coeff_, grad_coeff_, pd2_;   // per mode
  std::vector<std::vector<Cd>> A_, G_, G2_;        // [mode][species] state sums
  std::vector<double> S_;                          // per-species total rate
  std::vector<std::vector<Cd>> int_lap_, int_grad_, int_frame_, osc_;
  std::vector<std::vector<double>> sym_, rqv_cos_, rqv_sin_;
  double t_prev_ = 0;
  FieldSeries series_;
};

// ---- mollified quadratic field ----

// Integrand of the mollified quadratic functional at one snapshot:
//   out_i = sum_{j,k} hess[i](j,k) (1/N) sum_z H'(z/N - shift) Ybar^j(z) Ybar^k(z),
// where Ybar^j(z) = N^{-1/2} sum_x G_eps((x-z)/N)(k^j(x) - a0^j). Time
// integration across snapshots is the caller's quadrature.
Vec mollified_quadratic(const Lattice& lat, const TestFunction& H, const Vec& a0,
                        const std::vector<Mat>& hess, double eps, double shift = 0.0);

// ---- replica statistics ----

// Replica-averaged two-time correlations of one tracked mode:
// C[i][j](r, s) estimates E[Y^i_{t_r} Y^j_{t_s}] with leave-one-out errors.
struct StructureFactor {
  std::vector<double> times;
  int n = 0;
  bool low_replicas = false;  // fewer than 50 replicas
  std::vector<std::vector<Mat>> C, SE;
};

StructureFactor structure_factor(const std::vector<FieldSeries>& replicas, int mode, bool sine);

}  // namespace zrp
