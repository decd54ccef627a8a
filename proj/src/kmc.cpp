#include "zrp/kmc.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <sstream>

namespace zrp {

// ---- parameters ----

void SimParams::validate() const {
  if (N < 2) throw DomainError("lattice needs at least 2 sites");
  if (!(T >= 0.0) || !std::isfinite(T)) throw DomainError("horizon T must be finite and >= 0");
  const double p = p_right();
  if (!(p >= 0.0 && p <= 1.0)) {
    std::ostringstream os;
    os << "right-jump probability " << p << " outside [0, 1]";
    throw DomainError(os.str());
  }
  for (size_t r = 0; r < record_times.size(); ++r) {
    const double t = record_times[r];
    if (!(t >= 0.0 && t <= T)) throw DomainError("record time outside [0, T]");
    if (r > 0 && t < record_times[r - 1]) throw DomainError("record times must be ascending");
  }
}

// ---- lattice ----

Lattice::Lattice(RateFamily fam, int N) : fam_(std::move(fam)), N_(N), n_(fam_.n_species()) {
  if (N_ < 2) throw DomainError("lattice needs at least 2 sites");
  occ_.assign(static_cast<size_t>(N_) * n_, 0);
  site_rate_.assign(static_cast<size_t>(N_), 0.0);
  tree_.reset(N_);
  totals_.assign(n_, 0);
}

Lattice Lattice::stationary(const RateFamily& fam, int N, const Ensemble& ens, Rng& rng) {
  if (ens.n_species() != fam.n_species()) throw DomainError("ensemble/family species mismatch");
  Lattice lat(fam, N);
  for (int x = 0; x < N; ++x) {
    const OccVec k = ens.sample(rng);
    for (int i = 0; i < lat.n_; ++i) {
      lat.occ_[static_cast<size_t>(x) * lat.n_ + i] = k[i];
      lat.totals_[i] += k[i];
    }
  }
  lat.resync();
  return lat;
}

void Lattice::load(const std::vector<int32_t>& flat_occ) {
  if (flat_occ.size() != static_cast<size_t>(N_) * n_)
    throw DomainError("occupancy length must be N * n_species");
  for (int32_t k : flat_occ)
    if (k < 0) throw DomainError("occupancies must be >= 0");
  occ_ = flat_occ;
  totals_.assign(n_, 0);
  for (int x = 0; x < N_; ++x)
    for (int i = 0; i < n_; ++i) totals_[i] += occupancy(x, i);
  t_ = 0;
  since_rebuild_ = 0;
  resync();
}

double Lattice::exact_total_rate() const {
  double sum = 0;
  for (int x = 0; x < N_; ++x) {
    const int32_t* k = site(x);
    for (int i = 0; i < n_; ++i)
      if (k[i] > 0) sum += fam_.rate(i, k);
  }
  return sum;
}

void Lattice::resync() {
  OccVec check(n_, 0);
  for (int x = 0; x < N_; ++x) {
    const int32_t* k = site(x);
    double s = 0;
    for (int i = 0; i < n_; ++i) {
      check[i] += k[i];
      if (k[i] > 0) s += fam_.rate(i, k);
    }
    site_rate_[static_cast<size_t>(x)] = s;
  }
  if (check != totals_) throw NumericalError("particle conservation violated");
  tree_.rebuild(site_rate_);
  since_rebuild_ = 0;
}

RunReport Lattice::run(const SimParams& p, Rng& rng, const std::vector<Observer*>& observers) {
  p.validate();
  if (p.N != N_) throw DomainError("params.N does not match the lattice");

  const double pr = p.p_right();
  const double clock = static_cast<double>(N_) * static_cast<double>(N_);
  RunReport rep;

  size_t next_rec = 0;
  while (next_rec < p.record_times.size() && p.record_times[next_rec] < t_) ++next_rec;
  auto fire_records = [&](double tcut) {
    while (next_rec < p.record_times.size() && p.record_times[next_rec] <= tcut) {
      for (Observer* o : observers) o->record(p.record_times[next_rec], *this);
      ++next_rec;
    }
  };

  std::vector<double> gx_old(n_), gx_new(n_), gy_old(n_), gy_new(n_);

  while (t_ < p.T) {
    const double total = tree_.total();
    if (!std::isfinite(total)) {
      rep.early_stop = true;
      rep.reason = "rate overflow";
      break;
    }
    if (!(total > 0.0)) {
      // Frozen configuration: the state holds for all later times.
      fire_records(p.T);
      rep.early_stop = true;
      rep.reason = "total rate zero";
      t_ = p.T;
      break;
    }

    const double t_next = t_ + rng.exponential() / (clock * total);
    if (t_next >= p.T) {
      fire_records(p.T);
      t_ = p.T;
      break;
    }

    const int x = tree_.sample(rng.uniform() * total);
    const int32_t* kx = site(x);
    double sx = 0;
    for (int i = 0; i < n_; ++i) {
      gx_old[i] = kx[i] > 0 ? fam_.rate(i, kx) : 0.0;
      sx += gx_old[i];
    }
    if (!(sx > 0.0)) {  // stale cache picked a dead site; resynchronize and retry
      resync();
      continue;
    }
    fire_records(t_next);  // records see the state just before this event

    const double v = rng.uniform() * sx;
    int sp = 0;
    double acc = gx_old[0];
    while (sp + 1 < n_ && v > acc) acc += gx_old[++sp];
    if (gx_old[sp] <= 0.0) {
      for (int i = 0; i < n_; ++i)
        if (gx_old[i] > 0.0) { sp = i; break; }
    }

    const int dir = rng.uniform() < pr ? +1 : -1;
    int y = x + dir;
    if (y == N_) y = 0;
    if (y < 0) y = N_ - 1;
    const int32_t* ky = site(y);
    for (int i = 0; i < n_; ++i) gy_old[i] = ky[i] > 0 ? fam_.rate(i, ky) : 0.0;

    occ_[static_cast<size_t>(x) * n_ + sp] -= 1;
    occ_[static_cast<size_t>(y) * n_ + sp] += 1;
    double sx_new = 0, sy_new = 0;
    for (int i = 0; i < n_; ++i) {
      gx_new[i] = kx[i] > 0 ? fam_.rate(i, kx) : 0.0;
      gy_new[i] = ky[i] > 0 ? fam_.rate(i, ky) : 0.0;
      sx_new += gx_new[i];
      sy_new += gy_new[i];
    }
    tree_.add(x, sx_new - site_rate_[static_cast<size_t>(x)]);
    tree_.add(y, sy_new - site_rate_[static_cast<size_t>(y)]);
    site_rate_[static_cast<size_t>(x)] = sx_new;
    site_rate_[static_cast<size_t>(y)] = sy_new;

    t_ = t_next;
    rep.events += 1;

    if (!observers.empty()) {
      Event ev;
      ev.t = t_;
      ev.x = x;
      ev.y = y;
      ev.species = sp;
      ev.gx_old = gx_old.data();
      ev.gx_new = gx_new.data();
      ev.gy_old = gy_old.data();
      ev.gy_new = gy_new.data();
      for (Observer* o : observers) o->apply_event(ev);
    }

    if (++since_rebuild_ >= kRebuildEvery) {
      const double cached = tree_.total();
      resync();
      const double fresh = tree_.total();
      const double scale = std::max(std::abs(fresh), 1.0);
      if (std::abs(cached - fresh) > 1e-9 * scale)
        throw NumericalError("cached rates drifted beyond tolerance");
    }
  }

  if (!rep.early_stop) fire_records(p.T);  // covers T == 0 and resumed runs
  rep.t_end = t_;
  return rep;
}

// ---- exact small systems ----

namespace {

void compositions_rec(int sites_left, int remaining, OccVec& cur, std::vector<OccVec>& out) {
  if (sites_left == 1) {
    cur.push_back(remaining);
    out.push_back(cur);
    cur.pop_back();
    return;
  }
  for (int k = remaining; k >= 0; --k) {
    cur.push_back(k);
    compositions_rec(sites_left - 1, remaining - k, cur, out);
    cur.pop_back();
  }
}

std::vector<OccVec> compositions(int total, int sites) {
  std::vector<OccVec> out;
  OccVec cur;
  cur.reserve(sites);
  compositions_rec(sites, total, cur, out);
  return out;
}

double composition_count(int total, int sites) {
  double r = 1;
  for (int j = 1; j < sites; ++j) r *= static_cast<double>(total + j) / j;
  return r;
}

}  // namespace

std::vector<int32_t> CanonicalSystem::state(int64_t s) const {
  std::vector<int32_t> flat(static_cast<size_t>(sites) * n, 0);
  for (int i = 0; i < n; ++i) {
    const int64_t ci = (s / strides[i]) % static_cast<int64_t>(comps[i].size());
    const OccVec& row = comps[i][static_cast<size_t>(ci)];
    for (int x = 0; x < sites; ++x) flat[static_cast<size_t>(x) * n + i] = row[x];
  }
  return flat;
}

CanonicalSystem canonical_generator(const RateFamily& fam, int sites, const OccVec& totals,
                                    double p_right, bool torus, int64_t max_states) {
  const int n = fam.n_species();
  if (sites < 2) throw DomainError("need at least 2 sites");
  if (static_cast<int>(totals.size()) != n) throw DomainError("totals length must match species count");
  if (!(p_right >= 0.0 && p_right <= 1.0)) throw DomainError("jump bias outside [0, 1]");
  for (int32_t k : totals)
    if (k < 0) throw DomainError("totals must be >= 0");

  CanonicalSystem sys;
  sys.sites = sites;
  sys.n = n;
  sys.torus = torus;
  sys.p_right = p_right;

  double bound = 1;
  for (int i = 0; i < n; ++i) {
    bound *= composition_count(totals[i], sites);
    if (bound > static_cast<double>(max_states)) {
      std::ostringstream os;
      os << "state space exceeds " << max_states << " states";
      throw DomainError(os.str());
    }
  }

  sys.comps.resize(n);
  std::vector<std::map<OccVec, int>> index(n);
  int64_t count = 1;
  for (int i = 0; i < n; ++i) {
    sys.comps[i] = compositions(totals[i], sites);
    const int64_t m = static_cast<int64_t>(sys.comps[i].size());
    for (int64_t c = 0; c < m; ++c) index[i][sys.comps[i][static_cast<size_t>(c)]] = static_cast<int>(c);
    count *= m;
  }
  sys.n_states = count;

  sys.strides.assign(n, 1);
  for (int i = n - 2; i >= 0; --i)
    sys.strides[i] = sys.strides[i + 1] * static_cast<int64_t>(sys.comps[i + 1].size());

  std::vector<Eigen::Triplet<double>> trip;
  Vec logw(count);
  Vec diag = Vec::Zero(count);
  std::vector<int64_t> ci(n);
  OccVec sitek(n);

  for (int64_t s = 0; s < count; ++s) {
    for (int i = 0; i < n; ++i) ci[i] = (s / sys.strides[i]) % static_cast<int64_t>(sys.comps[i].size());
    const std::vector<int32_t> flat = sys.state(s);

    double lw = 0;
    for (int x = 0; x < sites; ++x) {
      for (int i = 0; i < n; ++i) sitek[i] = flat[static_cast<size_t>(x) * n + i];
      lw -= fam.log_g_factorial(sitek);
    }
    logw[s] = lw;

    for (int x = 0; x < sites; ++x) {
      const int32_t* kx = flat.data() + static_cast<size_t>(x) * n;
      for (int i = 0; i < n; ++i) {
        if (kx[i] <= 0) continue;
        const double g = fam.rate(i, kx);
        if (g == 0.0) continue;
        for (int dir : {+1, -1}) {
          int y = x + dir;
          if (torus) {
            if (y == sites) y = 0;
            if (y < 0) y = sites - 1;
          } else if (y < 0 || y >= sites) {
            continue;
          }
          const double rate = g * (dir > 0 ? p_right : 1.0 - p_right);
          if (rate == 0.0) continue;
          OccVec moved = sys.comps[i][static_cast<size_t>(ci[i])];
          moved[x] -= 1;
          moved[y] += 1;
          const int64_t cj = index[i].at(moved);
          const int64_t e = s + (cj - ci[i]) * sys.strides[i];
          trip.emplace_back(static_cast<int>(s), static_cast<int>(e), rate);
          diag[s] -= rate;
        }
      }
    }
  }
  for (int64_t s = 0; s < count; ++s)
    if (diag[s] != 0.0) trip.emplace_back(static_cast<int>(s), static_cast<int>(s), diag[s]);

  sys.Q.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(count));
  sys.Q.setFromTriplets(trip.begin(), trip.end());

  const double lmax = logw.maxCoeff();
  sys.weights = (logw.array() - lmax).exp().matrix();
  sys.weights /= sys.weights.sum();
  return sys;
}

double stationarity_residual(const CanonicalSystem& sys) {
  Vec flow = Vec::Zero(sys.n_states);
  for (int k = 0; k < sys.Q.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(sys.Q, k); it; ++it)
      flow[it.col()] += sys.weights[it.row()] * it.value();
  return flow.cwiseAbs().maxCoeff();
}

double detailed_balance_residual(const CanonicalSystem& sys) {
  double worst = 0;
  for (int k = 0; k < sys.Q.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(sys.Q, k); it; ++it) {
      if (it.row() == it.col()) continue;
      const double forward = sys.weights[it.row()] * it.value();
      const double backward = sys.weights[it.col()] * sys.Q.coeff(it.col(), it.row());
      worst = std::max(worst, std::abs(forward - backward));
    }
  return worst;
}

GapReport spectral_gap(const RateFamily& fam, const OccVec& totals, int ell, int64_t max_states) {
  if (ell < 1) throw DomainError("interval half-width must be >= 1");
  int64_t total = 0;
  for (int32_t k : totals) total += k;
  if (total == 0) throw DomainError("spectral gap undefined with no particles");

  const int sites = 2 * ell + 1;
  const CanonicalSystem sys = canonical_generator(fam, sites, totals, 0.5, false, max_states);
  if (sys.n_states < 2) throw DomainError("spectral gap undefined on a single state");
  constexpr int64_t kDenseCap = 4000;
  if (sys.n_states > kDenseCap) {
    std::ostringstream os;
    os << sys.n_states << " states exceed the dense eigensolve cap " << kDenseCap;
    throw DomainError(os.str());
  }

  // Similarity transform with sqrt of the reversible weights turns Q into a
  // symmetric matrix with the same spectrum.
  const int m = static_cast<int>(sys.n_states);
  const Vec sqw = sys.weights.cwiseSqrt();
  Mat A = Mat::Zero(m, m);
  for (int k = 0; k < sys.Q.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(sys.Q, k); it; ++it)
      A(it.row(), it.col()) = it.value() * sqw[it.row()] / sqw[it.col()];

  const double scale = std::max(A.cwiseAbs().maxCoeff(), 1.0);
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw NumericalError("symmetrized generator is not symmetric; weights are not reversible");
  A = ((A + A.transpose()) / 2).eval();

  Eigen::SelfAdjointEigenSolver<Mat> eig(A, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalError("eigensolve failed");
  const Vec ev = eig.eigenvalues();  // ascending; top eigenvalue is 0
  if (std::abs(ev[m - 1]) > 1e-8 * scale)
    throw NumericalError("largest eigenvalue of the generator is not 0");

  GapReport rep;
  rep.gap = -ev[m - 2];
  rep.W = 1.0 / rep.gap;
  rep.n_states = sys.n_states;
  return rep;
}

}  // namespace zrp
