#pragma once

namespace zrp {

// Neumaier-compensated accumulator for sums whose terms span many magnitudes.
template <typename Scalar = double>
struct Kahan {
  Scalar sum{0}, comp{0};

  void add(Scalar x) {
    Scalar t = sum + x;
    if ((sum >= 0 ? sum : -sum) >= (x >= 0 ? x : -x))
      comp += (sum - t) + x;
    else
      comp += (x - t) + sum;
    sum = t;
  }

  Scalar value() const { return sum + comp; }
};

}  // namespace zrp
