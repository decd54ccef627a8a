#pragma once

#include <vector>

namespace zrp {

// Fenwick (binary indexed) tree over nonnegative weights, supporting O(log n)
// point updates and weighted sampling by prefix-sum descent.
template <typename Scalar = double>
class Fenwick {
 public:
  explicit Fenwick(int n = 0) { reset(n); }

  void reset(int n) {
    n_ = n;
    log_ = 0;
    while ((1 << (log_ + 1)) <= n_) ++log_;
    t_.assign(static_cast<size_t>(n_) + 1, Scalar(0));
  }

  int size() const { return n_; }

  void add(int i, Scalar delta) {
    for (int j = i + 1; j <= n_; j += j & -j) t_[static_cast<size_t>(j)] += delta;
  }

  // Sum of weights over [0, i).
  Scalar prefix(int i) const {
    Scalar s = 0;
    for (int j = i; j > 0; j -= j & -j) s += t_[static_cast<size_t>(j)];
    return s;
  }

  Scalar total() const { return prefix(n_); }

  // Largest index i such that prefix(i) <= r; the sampled site for r drawn
  // uniformly in [0, total). Result clamped to [0, n-1].
  int sample(Scalar r) const {
    int pos = 0;
    for (int b = 1 << log_; b > 0; b >>= 1) {
      int next = pos + b;
      if (next <= n_ && t_[static_cast<size_t>(next)] <= r) {
        pos = next;
        r -= t_[static_cast<size_t>(next)];
      }
    }
    return pos < n_ ? pos : n_ - 1;
  }

  void rebuild(const std::vector<Scalar>& w) {
    reset(static_cast<int>(w.size()));
    for (int i = 0; i < n_; ++i) t_[static_cast<size_t>(i) + 1] += w[static_cast<size_t>(i)];
    for (int j = 1; j <= n_; ++j) {
      int parent = j + (j & -j);
      if (parent <= n_) t_[static_cast<size_t>(parent)] += t_[static_cast<size_t>(j)];
    }
  }

 private:
  int n_ = 0, log_ = 0;
  std::vector<Scalar> t_;
};

}  // namespace zrp
