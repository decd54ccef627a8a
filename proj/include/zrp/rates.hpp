#pragma once

#include "zrp/common.hpp"
#include "zrp/rng.hpp"

#include <functional>
#include <memory>
#include <optional>

namespace zrp {

enum class RateKind { independent, independent_factorial, multi_color, perturbed, table };

// Dense table over occupancy vectors with every coordinate <= cap, used for
// explicit rate tables and for finite perturbation factors.
class OccTable {
 public:
  OccTable() = default;
  OccTable(int n, int cap, double fill);

  int n() const { return n_; }
  int cap() const { return cap_; }
  bool contains(const int32_t* k) const {
    for (int i = 0; i < n_; ++i)
      if (k[i] < 0 || k[i] > cap_) return false;
    return true;
  }
  double get(const int32_t* k) const { return values_[index(k)]; }
  void set(const OccVec& k, double v) { values_[index(k.data())] = v; }

 private:
  size_t index(const int32_t* k) const {
    size_t idx = 0;
    for (int i = 0; i < n_; ++i) idx = idx * static_cast<size_t>(cap_ + 1) + static_cast<size_t>(k[i]);
    return idx;
  }
  int n_ = 0, cap_ = 0;
  std::vector<double> values_;
};

// A family of jump rates g_i : Z_+^n -> [0, inf). Immutable after
// construction; cheap to evaluate in the event loop.
class RateFamily {
 public:
  // Each particle jumps at rate 1: g_i(k) = k_i.
  static RateFamily independent(int n);
  // g_i(k) = k_i! (zero when k_i = 0).
  static RateFamily independent_factorial(int n);
  // Colored split of a scalar rate: g_i(k) = g(|k|) k_i / |k|.
  // g_of_m[m] tabulates g(m) for 0 <= m <= cap; g(0) must be 0.
  static RateFamily multi_color(int n, std::vector<double> g_of_m);
  static RateFamily multi_color(int n, const std::function<double(int)>& g, int cap);
  // g^lam_i(k) = g_i(k) * lam(k_{i,-}) / lam(k), lam = 1 outside its table.
  static RateFamily perturbed(RateFamily base, OccTable lambda);
  // Explicit table of g_i(k) for |k| <= cap; values laid out species-major
  // (values[i] is a dense OccTable-ordered slab).
  static RateFamily table(int n, int cap, std::vector<OccTable> per_species);

  int n_species() const { return n_; }
  RateKind kind() const { return kind_; }
  // Largest |k| that rate() accepts, or a very large value for closed-form kinds.
  int cap() const { return cap_; }

  double rate(int i, const int32_t* k) const;
  double rate(int i, const OccVec& k) const { return rate(i, k.data()); }

  // Product of rates along the canonical increasing path (fill species 1
  // first, then species 2, ...), evaluated at each vector just after the
  // addition. Path-independent when (INV) holds.
  double g_factorial(const OccVec& k) const;
  double log_g_factorial(const OccVec& k) const;

  const OccTable* perturbation() const { return lambda_ ? &*lambda_ : nullptr; }
  const RateFamily* base() const { return base_.get(); }

 private:
  RateFamily() = default;
  int n_ = 0;
  RateKind kind_ = RateKind::independent;
  int cap_ = 0;
  std::vector<double> scalar_g_;              // multi_color
  std::shared_ptr<const RateFamily> base_;    // perturbed
  std::optional<OccTable> lambda_;            // perturbed
  int lambda_total_cap_ = -1;                 // |k| beyond which lam == 1 for k and all k_{i,-}
  std::vector<OccTable> per_species_;         // table
  std::vector<double> factorials_;            // independent_factorial
};

struct ConditionReport {
  int cap = 0;  // every "holds" below is certified only for |k| <= cap
  struct {
    bool holds = false;
    double g_star = 0;  // inf g_i(k) over k_i >= 1 within cap
  } nd;
  struct {
    bool holds = false;
    double max_increment = 0;  // max |g_i(k_{j,+}) - g_i(k)| within cap
  } lg;
  struct {
    bool holds = false;
    double worst_violation = 0;  // worst relative ratio mismatch
    OccVec worst_k;
    int worst_i = -1, worst_j = -1;
  } inv;
  struct {
    double phi_star = 0;  // running min of g!(k)^{1/|k|} over shells
    bool monotone_decrease_warning = false;
  } ori;
  struct {
    bool holds = false;
    double min_gain = 0;  // min over i,k of g_i(k+m0) - g_i(k)
  } lb;
};

ConditionReport check_conditions(const RateFamily& fam, int cap, const OccVec& m0, double eps0);

// Max relative deviation of the g! product over `trials` random increasing
// paths against the canonical path value.
double check_path_independence(const RateFamily& fam, const OccVec& k, int trials, Rng& rng);

// Visit every k in Z_+^n with |k| <= cap.
void for_each_occupancy(int n, int cap, const std::function<void(const OccVec&)>& fn);

// Visit every k in Z_+^n with |k| = m exactly.
void for_each_on_shell(int n, int m, const std::function<void(const OccVec&)>& fn);

}  // namespace zrp
