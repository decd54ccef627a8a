#include "zrp/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace zrp {

namespace {

// ---- exact density expansion via the exponential-family chain rule ----

double observe(const SiteObservable& f, const OccVec& k) { return f.eval(k.data()); }

}  // namespace

TildeExpansion tilde_expansion(const Ensemble& ens, const SiteObservable& f) {
  const int n = ens.n_species();
  const std::vector<OccVec>& states = ens.states();
  const std::vector<double>& w = ens.weights();
  const double z = ens.partition();
  const Vec& a = ens.density();

  double fbar = 0;
  for (size_t s = 0; s < states.size(); ++s) fbar += w[s] / z * observe(f, states[s]);

  Vec v = Vec::Zero(n);      // cov(f, k_p)
  Mat m3 = Mat::Zero(n, n);  // third joint cumulant kappa(f, k_p, k_q)
  for (size_t s = 0; s < states.size(); ++s) {
    const double p = w[s] / z;
    const double df = observe(f, states[s]) - fbar;
    for (int pi = 0; pi < n; ++pi) {
      const double dp = states[s][static_cast<size_t>(pi)] - a[pi];
      v[pi] += p * df * dp;
      for (int q = 0; q < n; ++q) m3(pi, q) += p * df * dp * (states[s][static_cast<size_t>(q)] - a[q]);
    }
  }

  const Mat gamma_inv = ens.covariance().inverse();
  TildeExpansion out;
  out.value = fbar;
  out.grad = gamma_inv * v;
  Mat inner = m3;
  for (int m = 0; m < n; ++m) {
    Mat k3(n, n);
    for (int pi = 0; pi < n; ++pi)
      for (int q = 0; q < n; ++q) k3(pi, q) = ens.cumulant3(m, pi, q);
    inner -= out.grad[m] * k3;
  }
  out.hess = gamma_inv * inner * gamma_inv;
  out.hess = (out.hess + out.hess.transpose()) / 2.0;
  return out;
}

TildeExpansion tilde_expansion(const RateFamily& fam, const Vec& a0, const SiteObservable& f) {
  return tilde_expansion(Ensemble(fam, Ensemble::fugacity_of_density(fam, a0)), f);
}

// ---- block-sum distributions by sparse convolution ----

namespace {

using SumKey = std::vector<int32_t>;
using SumMap = std::map<SumKey, double>;

// Only guard against denormal underflow; anything larger is kept so the
// far tail of the table stays exact (the fourth root in the error norms
// amplifies junk in low-weight bins).
void prune(SumMap& m) {
  double peak = 0;
  for (const auto& [k, val] : m) peak = std::max(peak, std::abs(val));
  const double floor = 1e-290 * peak;
  for (auto it = m.begin(); it != m.end();)
    it = std::abs(it->second) < floor ? m.erase(it) : std::next(it);
}

// result(K) = sum_s a(K - s) b(s); false when the table outgrows the cap.
bool convolve(const SumMap& a, const std::vector<OccVec>& keys, const std::vector<double>& vals,
              SumMap& out, long max_states) {
  out.clear();
  for (const auto& [ka, va] : a)
    for (size_t s = 0; s < keys.size(); ++s) {
      if (vals[s] == 0) continue;
      SumKey k = ka;
      for (size_t i = 0; i < k.size(); ++i) k[i] += keys[s][i];
      out[k] += va * vals[s];
      if (static_cast<long>(out.size()) > max_states) return false;
    }
  prune(out);
  return true;
}

struct ExpansionAt {
  const Vec* a0;
  const Mat* gamma;
  const TildeExpansion* tx;
  int m;
  void eval(const Vec& y, double* first, double* second) const {
    const Vec d = y - *a0;
    const double lin = tx->value + tx->grad.dot(d);
    double quad = 0;
    for (int j = 0; j < d.size(); ++j)
      for (int k = 0; k < d.size(); ++k)
        quad += tx->hess(j, k) * (d[j] * d[k] - (*gamma)(j, k) / m);
    *first = lin;
    *second = lin + 0.5 * quad;
  }
};

void finish_norms(EnsembleComparison& out) {
  double total = 0, mass = 0, e1 = 0, e2 = 0;
  for (const EoeBin& b : out.table) total += b.weight;
  for (const EoeBin& b : out.table) {
    mass += b.weight;
    e1 += b.weight * std::pow(b.cond - b.first, 4);
    e2 += b.weight * std::pow(b.cond - b.second, 4);
  }
  if (total <= 0) throw NumericalError("block-sum distribution carries no mass");
  out.covered = mass / total;
  out.l4_first = std::pow(e1 / total, 0.25);
  out.l4_second = std::pow(e2 / total, 0.25);
  out.bins = static_cast<long>(out.table.size());
}

}  // namespace

std::vector<EnsembleComparison> eoe_check(const RateFamily& fam, const Vec& a0,
                                          const SiteObservable& f, const std::vector<int>& ells,
                                          long samples, Rng& rng, long max_states) {
  if (ells.empty()) throw DomainError("need at least one block radius");
  for (int ell : ells)
    if (ell < 1) throw DomainError("block radius must be at least 1");
  if (!f.eval) throw DomainError("observable carries no function");

  const Ensemble ens(fam, Ensemble::fugacity_of_density(fam, a0));
  const TildeExpansion tx = tilde_expansion(ens, f);
  const Mat gamma = ens.covariance();
  const int n = ens.n_species();

  // Normalized single-site law and its f-weighted companion.
  const std::vector<OccVec>& states = ens.states();
  std::vector<double> p(states.size()), fp(states.size());
  for (size_t s = 0; s < states.size(); ++s) {
    p[s] = ens.weights()[s] / ens.partition();
    fp[s] = p[s] * observe(f, states[s]);
  }

  std::vector<EnsembleComparison> result;
  for (int ell : ells) {
    EnsembleComparison cmp;
    cmp.ell = ell;
    cmp.m = 2 * ell + 1;
    const ExpansionAt expand{&a0, &gamma, &tx, cmp.m};

    // Exact path: (m-1)-fold sum law, then the f-weighted final site.
    SumMap q;
    q[SumKey(static_cast<size_t>(n), 0)] = 1.0;
    bool exact = true;
    SumMap next;
    for (int site = 0; site < cmp.m - 1; ++site) {
      if (!convolve(q, states, p, next, max_states)) {
        exact = false;
        break;
      }
      q.swap(next);
    }
    SumMap numer, denom;
    if (exact) exact = convolve(q, states, fp, numer, max_states);
    if (exact) exact = convolve(q, states, p, denom, max_states);

    if (exact) {
      cmp.exact = true;
      for (const auto& [key, wt] : denom) {
        if (wt <= 0) continue;
        EoeBin bin;
        bin.y = Vec(n);
        for (int i = 0; i < n; ++i) bin.y[i] = static_cast<double>(key[static_cast<size_t>(i)]) / cmp.m;
        bin.weight = wt;
        const auto hit = numer.find(key);
        bin.cond = hit == numer.end() ? 0.0 : hit->second / wt;
        expand.eval(bin.y, &bin.first, &bin.second);
        cmp.table.push_back(std::move(bin));
      }
      finish_norms(cmp);
    } else {
      if (samples <= 0)
        throw DomainError("block-sum table exceeds max_states and no Monte Carlo samples given");
      cmp.exact = false;
      constexpr long kBinFloor = 200;
      std::map<SumKey, std::pair<long, double>> bins;  // count, sum of f at the first site
      SumKey key(static_cast<size_t>(n), 0);
      for (long s = 0; s < samples; ++s) {
        std::fill(key.begin(), key.end(), 0);
        double f0 = 0;
        for (int site = 0; site < cmp.m; ++site) {
          const OccVec k = ens.sample(rng);
          if (site == 0) f0 = observe(f, k);
          for (int i = 0; i < n; ++i) key[static_cast<size_t>(i)] += k[static_cast<size_t>(i)];
        }
        auto& cell = bins[key];
        cell.first += 1;
        cell.second += f0;
      }
      double excluded = 0;
      for (const auto& [k, cell] : bins) {
        if (cell.first < kBinFloor) {
          ++cmp.low_bins;
          excluded += static_cast<double>(cell.first);
          continue;
        }
        EoeBin bin;
        bin.y = Vec(n);
        for (int i = 0; i < n; ++i) bin.y[i] = static_cast<double>(k[static_cast<size_t>(i)]) / cmp.m;
        bin.weight = static_cast<double>(cell.first) / static_cast<double>(samples);
        bin.cond = cell.second / static_cast<double>(cell.first);
        expand.eval(bin.y, &bin.first, &bin.second);
        cmp.table.push_back(std::move(bin));
      }
      finish_norms(cmp);
      cmp.covered = 1.0 - excluded / static_cast<double>(samples);
    }
    result.push_back(std::move(cmp));
  }
  return result;
}

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("need two or more points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw DomainError("log-log fit needs positive data");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double m = static_cast<double>(x.size());
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

// ---- block-replacement time integrals along trajectories ----

namespace {

class BgObserver final : public Observer {
 public:
  BgObserver(const SiteObservable& f, const TildeExpansion& tx, const Mat& gamma, const Vec& a0,
             const std::vector<double>& h, int N, int n, int ell)
      : f_(&f), tx_(&tx), gamma_(&gamma), a0_(&a0), h_(&h), N_(N), n_(n), ell_(ell),
        m_(2 * ell + 1) {}

  void attach(const Lattice& lat) {
    occ_ = lat.flat();
    sums_.assign(static_cast<size_t>(N_) * n_, 0);
    psi_.assign(static_cast<size_t>(N_), 0.0);
    visited_.assign(static_cast<size_t>(N_), 0);
    rebuild();
    t_prev_ = lat.time();
    integral_ = 0;
    sup_sq_ = 0;
  }

  void apply_event(const Event& e) override {
    advance(e.t);
    occ_[static_cast<size_t>(e.x) * n_ + e.species] -= 1;
    occ_[static_cast<size_t>(e.y) * n_ + e.species] += 1;
    shift_window(e.species, e.x, -1);
    shift_window(e.species, e.y, +1);
    touched_.clear();
    mark_window(e.x);
    mark_window(e.y);
    for (int x : touched_) {
      total_ -= psi_[static_cast<size_t>(x)] * (*h_)[static_cast<size_t>(x)];
      psi_[static_cast<size_t>(x)] = psi_at(x);
      total_ += psi_[static_cast<size_t>(x)] * (*h_)[static_cast<size_t>(x)];
      visited_[static_cast<size_t>(x)] = 0;
    }
  }

  void record(double t, const Lattice& lat) override {
    advance(t);
    // Audit the cached lattice sum against a fresh rebuild.
    const std::vector<int32_t> fresh = lat.flat();
    if (fresh != occ_) throw NumericalError("block observer lost an event");
    const double cached = total_;
    rebuild();
    if (std::abs(cached - total_) > 1e-6 * std::max(1.0, std::abs(total_)))
      throw NumericalError("block replacement accumulator drifted beyond tolerance");
  }

  double sup_sq() const { return sup_sq_; }

 private:
  void advance(double t) {
    const double dt = t - t_prev_;
    if (dt > 0) {
      integral_ += total_ * dt;
      sup_sq_ = std::max(sup_sq_, integral_ * integral_);
      t_prev_ = t;
    }
  }

  void shift_window(int species, int center, int32_t delta) {
    for (int d = -ell_; d <= ell_; ++d) {
      const int x = (center + d + N_) % N_;
      sums_[static_cast<size_t>(x) * n_ + species] += delta;
    }
  }

  void mark_window(int center) {
    for (int d = -ell_; d <= ell_; ++d) {
      const int x = (center + d + N_) % N_;
      if (!visited_[static_cast<size_t>(x)]) {
        visited_[static_cast<size_t>(x)] = 1;
        touched_.push_back(x);
      }
    }
  }

  double psi_at(int x) const {
    const int32_t* kx = occ_.data() + static_cast<size_t>(x) * n_;
    double lin = tx_->value, quad = 0;
    const int32_t* sx = sums_.data() + static_cast<size_t>(x) * n_;
    for (int j = 0; j < n_; ++j) {
      const double dj = static_cast<double>(sx[j]) / m_ - (*a0_)[j];
      lin += tx_->grad[j] * dj;
      for (int k = 0; k < n_; ++k) {
        const double dk = static_cast<double>(sx[k]) / m_ - (*a0_)[k];
        quad += tx_->hess(j, k) * (dj * dk - (*gamma_)(j, k) / m_);
      }
    }
    return f_->eval(kx) - lin - 0.5 * quad;
  }

  void rebuild() {
    // Sliding block sums, then the weighted lattice total.
    for (int j = 0; j < n_; ++j) {
      int32_t s = 0;
      for (int d = -ell_; d <= ell_; ++d) s += occ_[static_cast<size_t>((d + N_) % N_) * n_ + j];
      sums_[static_cast<size_t>(0) * n_ + j] = s;
      for (int x = 1; x < N_; ++x) {
        s += occ_[static_cast<size_t>((x + ell_) % N_) * n_ + j] -
             occ_[static_cast<size_t>((x - 1 - ell_ + 2 * N_) % N_) * n_ + j];
        sums_[static_cast<size_t>(x) * n_ + j] = s;
      }
    }
    total_ = 0;
    for (int x = 0; x < N_; ++x) {
      psi_[static_cast<size_t>(x)] = psi_at(x);
      total_ += psi_[static_cast<size_t>(x)] * (*h_)[static_cast<size_t>(x)];
    }
  }

  const SiteObservable* f_;
  const TildeExpansion* tx_;
  const Mat* gamma_;
  const Vec* a0_;
  const std::vector<double>* h_;
  int N_, n_, ell_, m_;
  std::vector<int32_t> occ_, sums_;
  std::vector<double> psi_;
  std::vector<uint8_t> visited_;
  std::vector<int> touched_;
  double total_ = 0, integral_ = 0, sup_sq_ = 0, t_prev_ = 0;
};

}  // namespace

std::vector<BgEstimate> bg_diagnostic(const RateFamily& fam, const Vec& a0,
                                      const SiteObservable& f, const std::vector<double>& h,
                                      const SimParams& p, const std::vector<int>& ells,
                                      int replicas, uint64_t seed) {
  if (ells.empty()) throw DomainError("need at least one block radius");
  for (int ell : ells)
    if (ell < 1 || 2 * ell + 1 > p.N)
      throw DomainError("block radius " + std::to_string(ell) + " does not fit the torus");
  if (static_cast<int>(h.size()) != p.N) throw DomainError("weight vector length mismatch");
  if (replicas < 2) throw DomainError("need at least two replicas");
  if (!f.eval) throw DomainError("observable carries no function");

  const Ensemble ens(fam, Ensemble::fugacity_of_density(fam, a0));
  const TildeExpansion tx = tilde_expansion(ens, f);
  const Mat gamma = ens.covariance();
  const int n = ens.n_species();

  SimParams run = p;
  if (run.record_times.empty() || run.record_times.back() < run.T)
    run.record_times.push_back(run.T);

  std::vector<std::vector<double>> sup_sq(ells.size());
  for (int r = 0; r < replicas; ++r) {
    Rng rng(seed, static_cast<uint64_t>(r));
    Lattice lat = Lattice::stationary(fam, p.N, ens, rng);
    std::vector<BgObserver> obs;
    obs.reserve(ells.size());
    for (int ell : ells) obs.emplace_back(f, tx, gamma, a0, h, p.N, n, ell);
    std::vector<Observer*> ptrs;
    for (BgObserver& o : obs) {
      o.attach(lat);
      ptrs.push_back(&o);
    }
    lat.run(run, rng, ptrs);
    for (size_t e = 0; e < ells.size(); ++e) sup_sq[e].push_back(obs[e].sup_sq());
  }

  double h2 = 0, habs = 0;
  for (double v : h) {
    h2 += v * v;
    habs += std::abs(v);
  }
  h2 /= p.N;
  habs /= p.N;

  std::vector<BgEstimate> out;
  for (size_t e = 0; e < ells.size(); ++e) {
    BgEstimate est;
    est.ell = ells[e];
    double mean = 0;
    for (double v : sup_sq[e]) mean += v;
    mean /= replicas;
    double var = 0;
    for (double v : sup_sq[e]) var += (v - mean) * (v - mean);
    var /= (replicas - 1);
    est.estimate = mean;
    est.se = std::sqrt(var / replicas);
    est.term_grad = p.T * est.ell / p.N * h2;
    est.term_block = p.T * p.T * static_cast<double>(p.N) * p.N /
                     (static_cast<double>(est.ell) * est.ell * est.ell) * habs * habs;
    out.push_back(est);
  }
  return out;
}

}  // namespace zrp
