#pragma once

#include "zrp/ensemble.hpp"
#include "zrp/fenwick.hpp"

#include <Eigen/SparseCore>

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace zrp {

// ---- simulation parameters ----

// The event clock runs at N^2 times the total jump rate, so T and
// record_times are macroscopic; a jump goes right with probability
// 1/2 + c / N^gamma and left otherwise.
struct SimParams {
  int N = 0;
  double gamma = 1.0;
  double c = 0.0;
  double T = 0.0;
  uint64_t seed = 1;
  std::vector<double> record_times;  // ascending, within [0, T]

  double p_right() const { return 0.5 + c / std::pow(static_cast<double>(N), gamma); }
  void validate() const;  // DomainError on bad N, T, jump bias, or record grid
};

// One executed jump: a particle of `species` moved from x to y at macroscopic
// time t. The pointers expose the n per-species rates at both touched sites
// before and after the move; they are valid only during the callback.
struct Event {
  double t = 0;
  int x = 0, y = 0, species = 0;
  const double* gx_old = nullptr;
  const double* gx_new = nullptr;
  const double* gy_old = nullptr;
  const double* gy_new = nullptr;
};

class Lattice;

class Observer {
 public:
  virtual ~Observer() = default;
  virtual void apply_event(const Event&) {}
  // Fired at each record time r with the state held just before the first
  // event at or past r (the path is right-continuous between events).
  virtual void record(double, const Lattice&) {}
};

struct RunReport {
  uint64_t events = 0;
  double t_end = 0;
  bool early_stop = false;
  std::string reason;  // set when early_stop: "total rate zero" or "rate overflow"
};

// ---- lattice + event loop ----

// Occupancies of n species on the torus {0..N-1}, stored site-major so that
// site(x) is directly a rate-family argument. Site rates are cached in a
// Fenwick tree for O(log N) weighted site selection and rebuilt from scratch
// every million events to stop floating-point drift.
class Lattice {
 public:
  Lattice(RateFamily fam, int N);

  // i.i.d. site occupancies drawn from the ensemble's single-site marginal.
  static Lattice stationary(const RateFamily& fam, int N, const Ensemble& ens, Rng& rng);

  int size() const { return N_; }
  int n_species() const { return n_; }
  double time() const { return t_; }
  const int32_t* site(int x) const { return occ_.data() + static_cast<size_t>(x) * n_; }
  int32_t occupancy(int x, int i) const { return occ_[static_cast<size_t>(x) * n_ + i]; }
  const std::vector<int32_t>& flat() const { return occ_; }
  const OccVec& totals() const { return totals_; }
  const RateFamily& rates() const { return fam_; }

  double cached_total_rate() const { return tree_.total(); }
  double exact_total_rate() const;

  // Replaces the configuration (site-major, length N*n) and resets the clock.
  void load(const std::vector<int32_t>& flat_occ);

  // Event loop from the current time to the macroscopic horizon p.T.
  // Observers receive every executed event and every record time; identical
  // (state, params, rng) reproduce the trajectory bit for bit.
  RunReport run(const SimParams& p, Rng& rng, const std::vector<Observer*>& observers = {});

 private:
  void resync();

  RateFamily fam_;
  int N_ = 0, n_ = 0;
  std::vector<int32_t> occ_;
  std::vector<double> site_rate_;
  Fenwick<double> tree_;
  OccVec totals_;
  double t_ = 0;
  uint64_t since_rebuild_ = 0;

  static constexpr uint64_t kRebuildEvery = 1'000'000;
};

// ---- exact small systems ----

// Full generator on the set of configurations over `sites` sites with fixed
// per-species totals, together with the product-form weights 1/prod_x g!(k(x))
// normalized on that set. On the torus these weights are stationary for any
// jump bias; on the interval (torus = false) with p_right = 1/2 they are
// reversible, matching the localized operator used for spectral gaps.
struct CanonicalSystem {
  int sites = 0, n = 0;
  bool torus = true;
  double p_right = 0.5;
  int64_t n_states = 0;
  Eigen::SparseMatrix<double> Q;  // Q(s, e) = rate s -> e; negative diagonal
  Vec weights;                    // normalized stationary/reversible weights

  // Occupancy of state s, site-major (length sites * n).
  std::vector<int32_t> state(int64_t s) const;

  std::vector<std::vector<OccVec>> comps;  // per-species occupancy rows
  std::vector<int64_t> strides;            // state index = sum_i comp_index_i * strides[i]
};

CanonicalSystem canonical_generator(const RateFamily& fam, int sites, const OccVec& totals,
                                    double p_right = 0.5, bool torus = true,
                                    int64_t max_states = 2'000'000);

// ||w^T Q||_inf for the system's weights (0 iff the weights are stationary).
double stationarity_residual(const CanonicalSystem& sys);

// max over transitions of |w_s Q(s,e) - w_e Q(e,s)|.
double detailed_balance_residual(const CanonicalSystem& sys);

struct GapReport {
  double gap = 0;  // second-smallest eigenvalue of the negated symmetric generator
  double W = 0;    // 1 / gap
  int64_t n_states = 0;
};

// Localized symmetric process on the interval of 2*ell + 1 sites with fixed
// totals: dense symmetric eigensolve of the weight-symmetrized generator.
GapReport spectral_gap(const RateFamily& fam, const OccVec& totals, int ell,
                       int64_t max_states = 2'000'000);

}  // namespace zrp
