#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace zrp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// One lattice site's per-species occupancy counts.
using OccVec = std::vector<int32_t>;

inline int64_t total_occupancy(const OccVec& k) {
  int64_t s = 0;
  for (int32_t v : k) s += v;
  return s;
}

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace zrp
