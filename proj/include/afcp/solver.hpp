#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "afcp/kernels.hpp"
#include "afcp/losses.hpp"

namespace afcp {

/// Weighted regularized empirical risk over coefficient vectors a in R^{n+1}:
///
///   R(v; a) = 1/(n+1) [ sum_i v_i l(Y_i, (Ka)_i)
///                       + v_{n+1} l(z, (Ka)_{n+1}) + v_{n+2} l(y, (Ka)_{n+1}) ]
///             + lambda a^T K a
///
/// The Gram matrix covers the n training inputs followed by the query input.
struct WeightedProblem {
  std::shared_ptr<const GramMatrix> gram;
  Eigen::VectorXd targets;  ///< Y_1..Y_n
  double z = 0.0;           ///< anchor output weighted by v_{n+1}
  double y = 0.0;           ///< candidate output weighted by v_{n+2}
  Eigen::VectorXd weights;  ///< v, length n+2
  double lambda = 1.0;
  LossSpec loss;

  Index n() const { return targets.size(); }
  void validate() const;

  /// u = (1,...,1,1,0): the sample completed with (X_{n+1}, z).
  static Eigen::VectorXd weights_u(Index n);
  /// w = (1,...,1,0,1): the sample completed with (X_{n+1}, y).
  static Eigen::VectorXd weights_w(Index n);
};

WeightedProblem make_problem(std::shared_ptr<const GramMatrix> gram, Eigen::VectorXd targets, double z, double y,
                             Eigen::VectorXd weights, double lambda, const LossSpec& loss);

struct SolverOptions {
  int max_iters = 100;
  double armijo_c = 1e-4;
  int max_halvings = 60;
  double cutoff = kDefaultCutoff;
  double tol_scale = 1e-10;
};

/// Stationary point of the weighted risk, restricted to range(K).
struct Predictor {
  Eigen::VectorXd coeffs;
  WeightedProblem problem;
  bool converged = false;
  double grad_norm = 0.0;
  int iterations = 0;

  /// (Ka)_i for every point of the augmented sample.
  Eigen::VectorXd fitted() const { return problem.gram->entries() * coeffs; }
  double fitted_at(Index i) const { return problem.gram->entries().row(i).dot(coeffs); }
};

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, Eigen::VectorXd last_iterate, double grad_norm, int iterations)
      : std::runtime_error(what), last_iterate_(std::move(last_iterate)), grad_norm_(grad_norm),
        iterations_(iterations) {}

  const Eigen::VectorXd& last_iterate() const { return last_iterate_; }
  double grad_norm() const { return grad_norm_; }
  int iterations() const { return iterations_; }

 private:
  Eigen::VectorXd last_iterate_;
  double grad_norm_;
  int iterations_;
};

double risk(const WeightedProblem& problem, const Eigen::VectorXd& a);

/// K g / (n+1) + 2 lambda K a, g_i = weighted d/du l at (Ka)_i.
Eigen::VectorXd gradient(const WeightedProblem& problem, const Eigen::VectorXd& a);

/// K diag(h) K / (n+1) + 2 lambda K, h_i = weighted d^2/du^2 l at (Ka)_i.
Eigen::MatrixXd hessian(const WeightedProblem& problem, const Eigen::VectorXd& a);

/// Stopping threshold on the gradient norm.
double gradient_tolerance(const WeightedProblem& problem, const SolverOptions& options);

/// Damped Newton with Armijo backtracking, started from `warm_start` (or 0).
/// Throws SolverError when the gradient tolerance is not met within
/// max_iters.
Predictor fit(const WeightedProblem& problem, const SolverOptions& options = {},
              const std::optional<Eigen::VectorXd>& warm_start = std::nullopt);

/// Upper bound on ||f - f*||_H, f* the exact minimizer, from the RKHS
/// gradient norm at the computed coefficients.
double certified_rkhs_error(const Predictor& predictor);

/// a^T kernel_row, where kernel_row = (k(X_1, x), ..., k(X_{n+1}, x)).
double predict(const Predictor& predictor, const Eigen::VectorXd& kernel_row);

/// || sum_i (a1 - a2)_i K_{X_i} ||_H
double rkhs_norm_diff(const Eigen::VectorXd& a1, const Eigen::VectorXd& a2, const GramMatrix& gram);

}  // namespace afcp
