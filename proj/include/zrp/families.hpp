#pragma once

#include "zrp/rates.hpp"

#include <cmath>

namespace zrp {

// Two independent unit-rate species with a multiplicative tilt on the two
// single-particle states: weight(1,0) = 1+x, weight(0,1) = 1+y.
inline RateFamily tilted_walk(double x, double y) {
  if (x <= -1.0 || y <= -1.0) throw DomainError("tilted_walk: tilts must exceed -1");
  OccTable lam(2, 1, 1.0);
  lam.set({1, 0}, 1.0 + x);
  lam.set({0, 1}, 1.0 + y);
  return RateFamily::perturbed(RateFamily::independent(2), lam);
}

// Scalar rate g(k) = k (1 + h(k)) with a two-site bump h supported on {1,2}:
// g(1) = a/b, g(2) = 2b/c, g(k>=3) = k. Tunes the low-occupancy weights to
// H(0)=a, H(1)=b, H(k>=2)=c while keeping unit-rate behaviour in the bulk.
inline std::function<double(int)> bump_rate(double a, double b, double c) {
  return [=](int k) {
    if (k <= 0) return 0.0;
    if (k == 1) return a / b;
    if (k == 2) return 2.0 * b / c;
    return static_cast<double>(k);
  };
}

// The bump height c at which the variance of the scalar marginal equals its
// mean at fugacity 1 (for a=1/2, b=1/4): root of (1/4 - c)^2 = c e / 4
// below 1/4.
inline double balanced_bump_height() {
  double B = 0.5 + std::exp(1.0) / 4.0;
  return (B - std::sqrt(B * B - 0.25)) / 2.0;
}

inline RateFamily multi_color_bump(int n, double c, int cap) {
  return RateFamily::multi_color(n, bump_rate(0.5, 0.25, c), cap);
}

}  // namespace zrp
