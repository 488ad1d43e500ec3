#pragma once

#include <memory>

#include <Eigen/Dense>

#include "afcp/conformal.hpp"
#include "afcp/data.hpp"
#include "afcp/kernels.hpp"

namespace afcp::testing {

/// Random points in [0,1]^d.
inline PointMatrix random_points(Index m, Index d, std::uint64_t seed) {
  Rng rng(seed);
  PointMatrix p(m, d);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < d; ++j) p(i, j) = rng.uniform();
  return p;
}

/// friedman1 training sample of size n plus a query row.
inline ConformalSetup friedman_setup(Index n, double lambda, const LossSpec& loss, std::uint64_t seed,
                                     double* y_query = nullptr) {
  const QuerySplit qs = split_query(friedman1(n + 1, 0.0, seed), n);
  if (y_query) *y_query = qs.y_query;
  return ConformalSetup{qs.train, qs.x_query, lambda, loss, KernelSpec{KernelFamily::laplacian, std::nullopt}, {}};
}

/// Random PSD matrix B B^T with B of size m x r.
inline Eigen::MatrixXd random_psd(Index m, Index r, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd b(m, r);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < r; ++j) b(i, j) = rng.normal();
  return b * b.transpose();
}

}  // namespace afcp::testing
