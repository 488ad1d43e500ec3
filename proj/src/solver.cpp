#include "afcp/solver.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "afcp/diagnostics.hpp"

namespace afcp {

namespace {

double inv_count(const WeightedProblem& p) { return 1.0 / static_cast<double>(p.n() + 1); }

// Per-point weighted derivative of order `order` at fitted values f = Ka.
Eigen::VectorXd weighted_derivative(const WeightedProblem& p, const Eigen::VectorXd& f, int order) {
  const Index n = p.n();
  Eigen::VectorXd g(n + 1);
  for (Index i = 0; i < n; ++i) {
    const double v = p.weights(i);
    g(i) = v == 0.0 ? 0.0 : v * loss_d(p.loss, order, p.targets(i), f(i));
  }
  double last = 0.0;
  if (p.weights(n) != 0.0) last += p.weights(n) * loss_d(p.loss, order, p.z, f(n));
  if (p.weights(n + 1) != 0.0) last += p.weights(n + 1) * loss_d(p.loss, order, p.y, f(n));
  g(n) = last;
  return g;
}

}  // namespace

void WeightedProblem::validate() const {
  if (!gram) throw InputError("WeightedProblem: missing Gram matrix");
  const Index m = n();
  if (gram->size() != m + 1) {
    std::ostringstream msg;
    msg << "WeightedProblem: Gram matrix has size " << gram->size() << ", expected n+1 = " << m + 1;
    throw InputError(msg.str());
  }
  if (weights.size() != m + 2) throw InputError("WeightedProblem: weights must have length n+2");
  if (!weights.allFinite()) throw InputError("WeightedProblem: weights must be finite");
  if (!targets.allFinite() || !std::isfinite(z) || !std::isfinite(y))
    throw InputError("WeightedProblem: outputs must be finite");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InputError("WeightedProblem: lambda must be positive");
  loss.validate();
}

Eigen::VectorXd WeightedProblem::weights_u(Index n) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n + 2);
  v(n + 1) = 0.0;
  return v;
}

Eigen::VectorXd WeightedProblem::weights_w(Index n) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n + 2);
  v(n) = 0.0;
  return v;
}

WeightedProblem make_problem(std::shared_ptr<const GramMatrix> gram, Eigen::VectorXd targets, double z, double y,
                             Eigen::VectorXd weights, double lambda, const LossSpec& loss) {
  WeightedProblem p{std::move(gram), std::move(targets), z, y, std::move(weights), lambda, loss};
  p.validate();
  return p;
}

double risk(const WeightedProblem& p, const Eigen::VectorXd& a) {
  const Index n = p.n();
  if (a.size() != n + 1) throw InputError("risk: coefficient vector must have length n+1");
  const Eigen::VectorXd f = p.gram->entries() * a;
  double data = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (p.weights(i) != 0.0) data += p.weights(i) * loss_value(p.loss, p.targets(i), f(i));
  }
  if (p.weights(n) != 0.0) data += p.weights(n) * loss_value(p.loss, p.z, f(n));
  if (p.weights(n + 1) != 0.0) data += p.weights(n + 1) * loss_value(p.loss, p.y, f(n));
  return inv_count(p) * data + p.lambda * a.dot(f);
}

Eigen::VectorXd gradient(const WeightedProblem& p, const Eigen::VectorXd& a) {
  if (a.size() != p.n() + 1) throw InputError("gradient: coefficient vector must have length n+1");
  const auto& k = p.gram->entries();
  const Eigen::VectorXd f = k * a;
  const Eigen::VectorXd g = weighted_derivative(p, f, 1);
  return k * (inv_count(p) * g + 2.0 * p.lambda * a);
}

Eigen::MatrixXd hessian(const WeightedProblem& p, const Eigen::VectorXd& a) {
  if (a.size() != p.n() + 1) throw InputError("hessian: coefficient vector must have length n+1");
  const auto& k = p.gram->entries();
  const Eigen::VectorXd h = weighted_derivative(p, k * a, 2);
  Eigen::MatrixXd hk = inv_count(p) * (h.asDiagonal() * k);
  hk.diagonal().array() += 2.0 * p.lambda;
  Eigen::MatrixXd out = k * hk;
  // exact symmetry
  out = 0.5 * (out + out.transpose()).eval();
  return out;
}

double gradient_tolerance(const WeightedProblem& p, const SolverOptions& options) {
  const double ynorm = std::sqrt(p.targets.squaredNorm() + p.z * p.z);
  return options.tol_scale * (1.0 + ynorm * inv_count(p));
}

Predictor fit(const WeightedProblem& problem, const SolverOptions& options,
              const std::optional<Eigen::VectorXd>& warm_start) {
  problem.validate();
  const Index size = problem.n() + 1;
  const GramMatrix& k = *problem.gram;

  Eigen::VectorXd a = Eigen::VectorXd::Zero(size);
  if (warm_start) {
    if (warm_start->size() != size) throw InputError("fit: warm start has wrong length");
    a = k.project_to_range(*warm_start, options.cutoff);
  }

  const double tol = gradient_tolerance(problem, options);
  double r = risk(problem, a);
  Eigen::VectorXd g = gradient(problem, a);
  double gnorm = g.norm();
  int iter = 0;

  while (gnorm > tol && iter < options.max_iters) {
    ++iter;
    Eigen::VectorXd d = pseudo_inverse_apply(hessian(problem, a), -g, options.cutoff);
    double slope = g.dot(d);
    if (!(slope < 0.0) || !d.allFinite()) {
      d = -g;
      slope = -gnorm * gnorm;
    }

    // Armijo backtracking; the absolute slack absorbs round-off in R once the
    // iterate is already at the optimum to working precision.
    const double slack = 8.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(r));
    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd trial;
    double r_trial = 0.0;
    for (int h = 0; h <= options.max_halvings; ++h) {
      trial = k.project_to_range(a + step * d, options.cutoff);
      r_trial = risk(problem, trial);
      if (std::isfinite(r_trial) && r_trial <= r + options.armijo_c * step * slope + slack) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    a = std::move(trial);
    r = r_trial;
    g = gradient(problem, a);
    gnorm = g.norm();
  }

  if (!(gnorm <= tol)) {
    std::ostringstream msg;
    msg << "fit: no convergence after " << iter << " iterations (gradient norm " << gnorm << ", tolerance " << tol
        << ")";
    throw SolverError(msg.str(), a, gnorm, iter);
  }
  return Predictor{std::move(a), problem, true, gnorm, iter};
}

double certified_rkhs_error(const Predictor& predictor) {
  const WeightedProblem& p = predictor.problem;
  const auto& k = p.gram->entries();
  const Eigen::VectorXd& a = predictor.coeffs;
  // coefficients of the RKHS gradient; the risk is 2 lambda-strongly convex in H
  const Eigen::VectorXd c = inv_count(p) * weighted_derivative(p, k * a, 1) + 2.0 * p.lambda * a;
  const double sq = c.dot(k * c);
  return (sq > 0.0 ? std::sqrt(sq) : 0.0) / (2.0 * p.lambda);
}

double predict(const Predictor& predictor, const Eigen::VectorXd& kernel_row) {
  if (kernel_row.size() != predictor.coeffs.size()) throw InputError("predict: kernel row length mismatch");
  return predictor.coeffs.dot(kernel_row);
}

double rkhs_norm_diff(const Eigen::VectorXd& a1, const Eigen::VectorXd& a2, const GramMatrix& gram) {
  if (a1.size() != a2.size() || a1.size() != gram.size()) throw InputError("rkhs_norm_diff: length mismatch");
  const Eigen::VectorXd diff = a1 - a2;
  const double sq = diff.dot(gram.entries() * diff);
  return sq > 0.0 ? std::sqrt(sq) : 0.0;
}

}  // namespace afcp
