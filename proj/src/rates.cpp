#include "zrp/rates.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace zrp {

namespace {
constexpr int kNoCap = std::numeric_limits<int>::max() / 4;
}

OccTable::OccTable(int n, int cap, double fill) : n_(n), cap_(cap) {
  size_t sz = 1;
  for (int i = 0; i < n; ++i) sz *= static_cast<size_t>(cap + 1);
  values_.assign(sz, fill);
}

RateFamily RateFamily::independent(int n) {
  RateFamily f;
  f.n_ = n;
  f.kind_ = RateKind::independent;
  f.cap_ = kNoCap;
  return f;
}

RateFamily RateFamily::independent_factorial(int n) {
  RateFamily f;
  f.n_ = n;
  f.kind_ = RateKind::independent_factorial;
  f.cap_ = 170;  // k! overflows double beyond this
  f.factorials_.resize(static_cast<size_t>(f.cap_) + 1);
  f.factorials_[0] = 1.0;
  for (int m = 1; m <= f.cap_; ++m) f.factorials_[static_cast<size_t>(m)] = f.factorials_[static_cast<size_t>(m) - 1] * m;
  return f;
}

RateFamily RateFamily::multi_color(int n, std::vector<double> g_of_m) {
  if (g_of_m.empty() || g_of_m[0] != 0.0) throw DomainError("multi_color: need g(0) = 0");
  RateFamily f;
  f.n_ = n;
  f.kind_ = RateKind::multi_color;
  f.cap_ = static_cast<int>(g_of_m.size()) - 1;
  f.scalar_g_ = std::move(g_of_m);
  return f;
}

RateFamily RateFamily::multi_color(int n, const std::function<double(int)>& g, int cap) {
  std::vector<double> tab(static_cast<size_t>(cap) + 1);
  for (int m = 0; m <= cap; ++m) tab[static_cast<size_t>(m)] = g(m);
  return multi_color(n, std::move(tab));
}

RateFamily RateFamily::perturbed(RateFamily base, OccTable lambda) {
  if (lambda.n() != base.n_species()) throw DomainError("perturbed: dimension mismatch");
  OccVec zero(static_cast<size_t>(lambda.n()), 0);
  if (lambda.get(zero.data()) != 1.0) throw DomainError("perturbed: lambda(0) must be 1");
  RateFamily f;
  f.n_ = base.n_species();
  f.kind_ = RateKind::perturbed;
  f.cap_ = base.cap();
  f.lambda_total_cap_ = lambda.n() * lambda.cap();
  f.base_ = std::make_shared<RateFamily>(std::move(base));
  f.lambda_ = std::move(lambda);
  return f;
}

RateFamily RateFamily::table(int n, int cap, std::vector<OccTable> per_species) {
  if (static_cast<int>(per_species.size()) != n) throw DomainError("table: need one slab per species");
  RateFamily f;
  f.n_ = n;
  f.kind_ = RateKind::table;
  f.cap_ = cap;
  f.per_species_ = std::move(per_species);
  return f;
}

double RateFamily::rate(int i, const int32_t* k) const {
  if (k[i] <= 0) return 0.0;
  switch (kind_) {
    case RateKind::independent:
      return static_cast<double>(k[i]);
    case RateKind::independent_factorial:
      return factorials_[static_cast<size_t>(std::min(k[i], cap_))];
    case RateKind::multi_color: {
      int32_t tot = 0;
      for (int j = 0; j < n_; ++j) tot += k[j];
      if (tot > cap_) throw DomainError("multi_color: cap exceeded");
      return scalar_g_[static_cast<size_t>(tot)] * static_cast<double>(k[i]) / static_cast<double>(tot);
    }
    case RateKind::perturbed: {
      double base = base_->rate(i, k);
      int32_t tot = 0;
      for (int j = 0; j < n_; ++j) tot += k[j];
      // lambda == 1 for both k and k_{i,-} once |k| is past the table.
      if (tot > lambda_total_cap_ + 1) return base;
      double lam_k = lambda_->contains(k) ? lambda_->get(k) : 1.0;
      OccVec km(k, k + n_);
      km[static_cast<size_t>(i)] -= 1;
      double lam_km = lambda_->contains(km.data()) ? lambda_->get(km.data()) : 1.0;
      return base * lam_km / lam_k;
    }
    case RateKind::table: {
      int32_t tot = 0;
      for (int j = 0; j < n_; ++j) tot += k[j];
      if (tot > cap_ || !per_species_[static_cast<size_t>(i)].contains(k)) throw DomainError("table: cap exceeded");
      return per_species_[static_cast<size_t>(i)].get(k);
    }
  }
  return 0.0;
}

double RateFamily::log_g_factorial(const OccVec& k) const {
  double acc = 0.0;
  OccVec cur(k.size(), 0);
  for (int i = 0; i < n_; ++i) {
    for (int32_t m = 1; m <= k[static_cast<size_t>(i)]; ++m) {
      cur[static_cast<size_t>(i)] = m;
      double g = rate(i, cur.data());
      if (g <= 0.0) throw DomainError("g_factorial: zero rate along increasing path");
      acc += std::log(g);
    }
  }
  return acc;
}

double RateFamily::g_factorial(const OccVec& k) const {
  for (int32_t v : k)
    if (v < 0) throw DomainError("g_factorial: negative occupancy");
  if (total_occupancy(k) > 30) return std::exp(log_g_factorial(k));
  double acc = 1.0;
  OccVec cur(k.size(), 0);
  for (int i = 0; i < n_; ++i) {
    for (int32_t m = 1; m <= k[static_cast<size_t>(i)]; ++m) {
      cur[static_cast<size_t>(i)] = m;
      acc *= rate(i, cur.data());
    }
  }
  return acc;
}

void for_each_on_shell(int n, int m, const std::function<void(const OccVec&)>& fn) {
  OccVec k(static_cast<size_t>(n), 0);
  std::function<void(int, int)> rec = [&](int i, int left) {
    if (i == n - 1) {
      k[static_cast<size_t>(i)] = left;
      fn(k);
      k[static_cast<size_t>(i)] = 0;
      return;
    }
    for (int32_t v = 0; v <= left; ++v) {
      k[static_cast<size_t>(i)] = v;
      rec(i + 1, left - v);
    }
    k[static_cast<size_t>(i)] = 0;
  };
  if (n > 0) rec(0, m);
}

void for_each_occupancy(int n, int cap, const std::function<void(const OccVec&)>& fn) {
  OccVec k(static_cast<size_t>(n), 0);
  std::function<void(int, int)> rec = [&](int i, int left) {
    if (i == n - 1) {
      for (int32_t v = 0; v <= left; ++v) {
        k[static_cast<size_t>(i)] = v;
        fn(k);
      }
      k[static_cast<size_t>(i)] = 0;
      return;
    }
    for (int32_t v = 0; v <= left; ++v) {
      k[static_cast<size_t>(i)] = v;
      rec(i + 1, left - v);
    }
    k[static_cast<size_t>(i)] = 0;
  };
  if (n > 0) rec(0, cap);
}

ConditionReport check_conditions(const RateFamily& fam, int cap, const OccVec& m0, double eps0) {
  ConditionReport rep;
  rep.cap = cap;
  const int n = fam.n_species();

  // (ND): zero exactly when the species is absent, uniform positive lower bound.
  rep.nd.holds = true;
  rep.nd.g_star = std::numeric_limits<double>::infinity();
  for_each_occupancy(n, cap, [&](const OccVec& k) {
    for (int i = 0; i < n; ++i) {
      double g = fam.rate(i, k);
      if (k[static_cast<size_t>(i)] == 0) {
        if (g != 0.0) rep.nd.holds = false;
      } else {
        if (g <= 0.0) rep.nd.holds = false;
        rep.nd.g_star = std::min(rep.nd.g_star, g);
      }
    }
  });
  if (!(rep.nd.g_star > 0.0)) rep.nd.holds = false;

  // (LG): increments from adding one particle of any species stay bounded.
  rep.lg.max_increment = 0.0;
  for_each_occupancy(n, cap - 1, [&](const OccVec& k) {
    for (int j = 0; j < n; ++j) {
      OccVec kp = k;
      kp[static_cast<size_t>(j)] += 1;
      for (int i = 0; i < n; ++i) {
        double d = std::abs(fam.rate(i, kp) - fam.rate(i, k));
        rep.lg.max_increment = std::max(rep.lg.max_increment, d);
      }
    }
  });
  rep.lg.holds = std::isfinite(rep.lg.max_increment);

  // (INV): ratio compatibility for every pair of present species.
  rep.inv.holds = true;
  rep.inv.worst_violation = 0.0;
  for_each_occupancy(n, cap, [&](const OccVec& k) {
    for (int i = 0; i < n; ++i) {
      if (k[static_cast<size_t>(i)] == 0) continue;
      for (int j = i + 1; j < n; ++j) {
        if (k[static_cast<size_t>(j)] == 0) continue;
        OccVec kjm = k, kim = k;
        kjm[static_cast<size_t>(j)] -= 1;
        kim[static_cast<size_t>(i)] -= 1;
        double lhs = fam.rate(i, k) * fam.rate(j, kim);
        double rhs = fam.rate(j, k) * fam.rate(i, kjm);
        double scale = std::max({std::abs(lhs), std::abs(rhs), 1e-300});
        double rel = std::abs(lhs - rhs) / scale;
        if (rel > rep.inv.worst_violation) {
          rep.inv.worst_violation = rel;
          rep.inv.worst_k = k;
          rep.inv.worst_i = i;
          rep.inv.worst_j = j;
        }
      }
    }
  });
  if (rep.inv.worst_violation > 1e-12) rep.inv.holds = false;

  // (ORI): running min of g!(k)^{1/|k|} per shell; a liminf cannot be
  // certified at finite cap, so a monotone decrease is only flagged.
  rep.ori.phi_star = std::numeric_limits<double>::infinity();
  double prev_shell_min = std::numeric_limits<double>::infinity();
  int decreasing_streak = 0;
  for (int m = 1; m <= cap; ++m) {
    double shell_min = std::numeric_limits<double>::infinity();
    for_each_on_shell(n, m, [&](const OccVec& k) {
      double root;
      try {
        root = std::exp(fam.log_g_factorial(k) / static_cast<double>(m));
      } catch (const DomainError&) {
        root = 0.0;  // a dead rate along the path kills the product
      }
      shell_min = std::min(shell_min, root);
    });
    rep.ori.phi_star = std::min(rep.ori.phi_star, shell_min);
    decreasing_streak = (shell_min < prev_shell_min) ? decreasing_streak + 1 : 0;
    prev_shell_min = shell_min;
  }
  rep.ori.monotone_decrease_warning = decreasing_streak >= std::max(3, cap / 2);

  // (LB): adding m0 raises every rate by at least eps0.
  rep.lb.min_gain = std::numeric_limits<double>::infinity();
  int m0_tot = static_cast<int>(total_occupancy(m0));
  for_each_occupancy(n, std::max(0, cap - m0_tot), [&](const OccVec& k) {
    OccVec kp = k;
    for (int i = 0; i < n; ++i) kp[static_cast<size_t>(i)] += m0[static_cast<size_t>(i)];
    for (int i = 0; i < n; ++i) rep.lb.min_gain = std::min(rep.lb.min_gain, fam.rate(i, kp) - fam.rate(i, k));
  });
  rep.lb.holds = rep.lb.min_gain >= eps0;

  return rep;
}

double check_path_independence(const RateFamily& fam, const OccVec& k, int trials, Rng& rng) {
  const int n = static_cast<int>(k.size());
  double log_canon = fam.log_g_factorial(k);
  std::vector<int> steps;
  for (int i = 0; i < n; ++i)
    for (int32_t m = 0; m < k[static_cast<size_t>(i)]; ++m) steps.push_back(i);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    // Fisher-Yates over the step multiset gives a uniform increasing path.
    std::vector<int> path = steps;
    for (size_t j = path.size(); j > 1; --j) std::swap(path[j - 1], path[rng.below(j)]);
    OccVec cur(k.size(), 0);
    double log_prod = 0.0;
    for (int i : path) {
      cur[static_cast<size_t>(i)] += 1;
      double g = fam.rate(i, cur.data());
      if (g <= 0.0) return std::numeric_limits<double>::infinity();
      log_prod += std::log(g);
    }
    worst = std::max(worst, std::abs(std::expm1(log_prod - log_canon)));
  }
  return worst;
}

}  // namespace zrp
