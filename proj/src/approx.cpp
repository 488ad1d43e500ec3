#include "afcp/approx.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>

#include "afcp/diagnostics.hpp"

namespace afcp {

std::string method_name(ApproxKind kind) {
  switch (kind) {
    case ApproxKind::uniform_stability:
      return "UStableCP";
    case ApproxKind::local_stability:
      return "LocStableCP";
    case ApproxKind::influence_function:
      return "InfluenceFunctionCP";
  }
  return "unknown";
}

ApproxKind approx_kind_from_string(const std::string& name) {
  if (name == "UStableCP" || name == "uniform_stability" || name == "0") return ApproxKind::uniform_stability;
  if (name == "LocStableCP" || name == "local_stability" || name == "1") return ApproxKind::local_stability;
  if (name == "InfluenceFunctionCP" || name == "influence_function" || name == "2")
    return ApproxKind::influence_function;
  throw InputError("unknown approximation method '" + name + "'");
}

namespace {

double lambda_count(const GramMatrix& gram, double lambda) {
  if (!(lambda > 0.0)) throw InputError("lambda must be positive");
  return lambda * static_cast<double>(gram.size());
}

Eigen::VectorXd sqrt_diag_times_test(const GramMatrix& gram) {
  const Index last = gram.size() - 1;
  return gram.diagonal().cwiseMax(0.0).cwiseSqrt() * std::sqrt(std::max(gram(last, last), 0.0));
}

}  // namespace

Eigen::VectorXd tau0(const GramMatrix& gram, const SmoothnessConstants& c, double lambda) {
  return sqrt_diag_times_test(gram) * (c.gamma_score * c.rho / lambda_count(gram, lambda));
}

double rho1(double y, double z, double f_query, const LossSpec& loss) {
  return 0.5 * std::abs(loss_d(loss, 1, y, f_query) - loss_d(loss, 1, z, f_query));
}

Eigen::VectorXd tau1(const GramMatrix& gram, const SmoothnessConstants& c, double lambda, double rho1_value) {
  return sqrt_diag_times_test(gram) * (c.gamma_score * rho1_value / lambda_count(gram, lambda));
}

double rho1_tilde(const GramMatrix& gram, const SmoothnessConstants& c, double lambda, double rho1_value) {
  const Index last = gram.size() - 1;
  return (1.0 + gram(last, last) * c.beta2 / lambda_count(gram, lambda)) * rho1_value;
}

double rho2(const GramMatrix& gram, const SmoothnessConstants& c, double lambda, double rho1_value) {
  const Index last = gram.size() - 1;
  const double k_test = gram(last, last);
  const double rt = rho1_tilde(gram, c, lambda, rho1_value);
  const double mean_diag32 = gram.diagonal().cwiseMax(0.0).array().pow(1.5).mean();
  return 0.5 * c.xi * std::sqrt(k_test) * mean_diag32 * rt * rt + 2.0 * lambda * k_test * c.beta2 * rt;
}

Eigen::VectorXd tau2(const GramMatrix& gram, const SmoothnessConstants& c, double lambda, double rho1_value) {
  const double ln = lambda_count(gram, lambda);
  const double r2 = rho2(gram, c, lambda, rho1_value);
  const double first = c.gamma_score * r2 / (lambda * ln * ln);
  const double second = 2.0 * c.gamma_score * rho1_value / ln;
  return sqrt_diag_times_test(gram) * std::min(first, second);
}

// ---------------------------------------------------------------------------

ApproxContext::ApproxContext(const ConformalSetup& setup, ApproxMethod method)
    : ApproxContext(setup, method, setup.augmented_gram()) {}

ApproxContext::ApproxContext(const ConformalSetup& setup, ApproxMethod method,
                             std::shared_ptr<const GramMatrix> gram)
    : method_(method), gram_(std::move(gram)), lambda_(setup.lambda), loss_(setup.loss) {
  if (!std::isfinite(method_.z)) throw InputError("approximation anchor z must be finite");
  if (!gram_ || gram_->size() != setup.n() + 1) throw InputError("ApproxContext: Gram matrix size mismatch");
  init(setup);
}

void ApproxContext::init(const ConformalSetup& setup) {
  constants_ = smoothness_constants(loss_);
  const Index n = setup.n();
  base_ = fit(setup.problem(gram_, method_.z, method_.z, WeightedProblem::weights_u(n)), setup.solver);
  f_base_ = base_.fitted();
  base_scores_.resize(n);
  for (Index i = 0; i < n; ++i) base_scores_(i) = score(setup.data.Y(i), f_base_(i));
  sqrt_diag_ = gram_->diagonal().cwiseMax(0.0).cwiseSqrt();

  if (method_.kind == ApproxKind::influence_function) {
    const Eigen::MatrixXd h = hessian(base_.problem, base_.coeffs);
    direction_ = pseudo_inverse_apply(h, gram_->entries().col(n), setup.solver.cutoff);
    k_direction_ = gram_->entries() * direction_;
  }
}

Eigen::VectorXd ApproxContext::influence_vector(double z_prime) const {
  if (direction_.size() == 0) throw InputError("influence_vector: context was not built for the influence method");
  const double scale = -loss_d(loss_, 1, z_prime, f_query()) / static_cast<double>(n() + 1);
  return scale * direction_;
}

double ApproxContext::if_scale(double y) const {
  return (loss_d(loss_, 1, method_.z, f_query()) - loss_d(loss_, 1, y, f_query())) / static_cast<double>(n() + 1);
}

Eigen::VectorXd ApproxContext::if_coeffs(double y) const {
  if (direction_.size() == 0) throw InputError("if_coeffs: context was not built for the influence method");
  return base_.coeffs + if_scale(y) * direction_;
}

Eigen::VectorXd ApproxContext::approx_coeffs(double y) const {
  if (method_.kind == ApproxKind::influence_function) return if_coeffs(y);
  return base_.coeffs;
}

Eigen::VectorXd ApproxContext::approx_fitted(double y) const {
  if (method_.kind == ApproxKind::influence_function) return f_base_ + if_scale(y) * k_direction_;
  return f_base_;
}

Eigen::VectorXd ApproxContext::tau(double y) const {
  switch (method_.kind) {
    case ApproxKind::uniform_stability:
      return tau0(*gram_, constants_, lambda_);
    case ApproxKind::local_stability:
      return tau1(*gram_, constants_, lambda_, rho1(y, method_.z, f_query(), loss_));
    case ApproxKind::influence_function:
      return tau2(*gram_, constants_, lambda_, rho1(y, method_.z, f_query(), loss_));
  }
  return {};
}

ApproxPoint ApproxContext::evaluate(double y) const {
  const Index n = this->n();
  const double ln = lambda_ * static_cast<double>(n + 1);
  const double r1 = rho1(y, method_.z, f_query(), loss_);

  // all tau_i share the factor sqrt(K_ii); only the scalar multiplier depends on y
  double unit = 0.0;
  double r2 = 0.0;
  switch (method_.kind) {
    case ApproxKind::uniform_stability:
      unit = constants_.gamma_score * constants_.rho / ln;
      break;
    case ApproxKind::local_stability:
      unit = constants_.gamma_score * r1 / ln;
      break;
    case ApproxKind::influence_function:
      r2 = rho2(*gram_, constants_, lambda_, r1);
      unit = std::min(constants_.gamma_score * r2 / (lambda_ * ln * ln),
                      2.0 * constants_.gamma_score * r1 / ln);
      break;
  }
  const double sqrt_test = sqrt_diag_(n);
  unit *= sqrt_test;

  double test_score;
  Index up = 0, low = 0;
  const double tau_test = sqrt_test * unit;
  if (method_.kind == ApproxKind::influence_function) {
    const double s = if_scale(y);
    test_score = score(y, f_base_(n) + s * k_direction_(n));
    const auto& targets = base_.problem.targets;
    for (Index i = 0; i < n; ++i) {
      const double si = score(targets(i), f_base_(i) + s * k_direction_(i));
      const double ti = sqrt_diag_(i) * unit;
      if (si + ti >= test_score - tau_test) ++up;
      if (si - ti >= test_score + tau_test) ++low;
    }
  } else {
    test_score = score(y, f_base_(n));
    for (Index i = 0; i < n; ++i) {
      const double ti = sqrt_diag_(i) * unit;
      if (base_scores_(i) + ti >= test_score - tau_test) ++up;
      if (base_scores_(i) - ti >= test_score + tau_test) ++low;
    }
  }

  ApproxPoint pt;
  const double denom = static_cast<double>(n + 1);
  pt.upper_p = static_cast<double>(1 + up) / denom;
  pt.lower_p = static_cast<double>(1 + low) / denom;
  pt.tau_test = tau_test;
  pt.tau_max = sqrt_diag_.maxCoeff() * unit;
  pt.rho1 = r1;
  pt.rho2 = r2;
  return pt;
}

namespace {

PValueCurve empty_curve(const YGrid& grid) {
  const Index m = grid.size();
  PValueCurve curve{grid, Eigen::VectorXd(m), Eigen::VectorXd(m), {}};
  for (const char* key : {"tau_test", "tau_max", "rho1", "rho2"}) curve.extras[key] = Eigen::VectorXd(m);
  return curve;
}

void store(PValueCurve& curve, Index j, const ApproxPoint& pt) {
  curve.upper(j) = pt.upper_p;
  curve.lower(j) = pt.lower_p;
  curve.extras["tau_test"](j) = pt.tau_test;
  curve.extras["tau_max"](j) = pt.tau_max;
  curve.extras["rho1"](j) = pt.rho1;
  curve.extras["rho2"](j) = pt.rho2;
}

}  // namespace

PValueCurve approx_pvalue_curves(const ApproxContext& ctx, const YGrid& grid) {
  PValueCurve curve = empty_curve(grid);
  const Index m = grid.size();
  std::vector<ApproxPoint> pts(static_cast<std::size_t>(m));
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < m; ++j) pts[static_cast<std::size_t>(j)] = ctx.evaluate(grid.at(j));
  for (Index j = 0; j < m; ++j) store(curve, j, pts[static_cast<std::size_t>(j)]);
  return curve;
}

PValueCurve approx_pvalue_curves(const ConformalSetup& setup, const YGrid& grid, ApproxMethod method) {
  return approx_pvalue_curves(ApproxContext(setup, method), grid);
}

PValueCurve approx_pvalue_curves_serial(const ApproxContext& ctx, const YGrid& grid) {
  PValueCurve curve = empty_curve(grid);
  for (Index j = 0; j < grid.size(); ++j) store(curve, j, ctx.evaluate(grid.at(j)));
  return curve;
}

double thickness_gap(const PredictionRegion& upper, const PredictionRegion& lower) {
  if (!(upper.grid() == lower.grid())) throw InputError("thickness_gap: regions live on different grids");
  Index cells = 0;
  for (std::size_t j = 0; j < upper.mask().size(); ++j)
    if (upper.mask()[j] && !lower.mask()[j]) ++cells;
  return upper.grid().step() * static_cast<double>(cells);
}

ThicknessBound thickness_bound(ApproxKind kind, const GramMatrix& gram, const SmoothnessConstants& c, double lambda,
                               double tau2_sup) {
  const double ln = lambda_count(gram, lambda);
  const double kappa2 = gram.diag_max();
  const double crude = c.gamma_score * c.rho * kappa2 / ln;
  if (kind != ApproxKind::influence_function) return {8.0 * crude, true};
  if (!(tau2_sup >= 0.0) || !std::isfinite(tau2_sup)) throw InputError("thickness_bound: invalid tau2 supremum");
  const double beta = c.beta1 * kappa2 / ln;
  if (beta < 1.0) return {12.0 / (1.0 - beta) * tau2_sup, true};
  return {8.0 * (crude + tau2_sup), false};
}

}  // namespace afcp
