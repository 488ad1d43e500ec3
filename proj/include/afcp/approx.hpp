#pragma once

#include <memory>
#include <string>

#include <Eigen/Dense>

#include "afcp/conformal.hpp"
#include "afcp/kernels.hpp"
#include "afcp/losses.hpp"
#include "afcp/solver.hpp"

namespace afcp {

enum class ApproxKind { uniform_stability = 0, local_stability = 1, influence_function = 2 };

/// Approximation of the refit at candidate y by quantities computed once at
/// the anchor output z.
struct ApproxMethod {
  ApproxKind kind = ApproxKind::uniform_stability;
  double z = 0.0;

  int order() const { return static_cast<int>(kind); }
};

/// "UStableCP", "LocStableCP", "InfluenceFunctionCP"
std::string method_name(ApproxKind kind);
ApproxKind approx_kind_from_string(const std::string& name);

/// sqrt(K_ii) sqrt(K_{n+1,n+1}) gamma rho / (lambda (n+1)), y-independent.
Eigen::VectorXd tau0(const GramMatrix& gram, const SmoothnessConstants& c, double lambda);

/// (1/2) |d/du l(y, f_query) - d/du l(z, f_query)|, f_query the base fit at
/// the query input.
double rho1(double y, double z, double f_query, const LossSpec& loss);

/// tau0 with rho replaced by rho1.
Eigen::VectorXd tau1(const GramMatrix& gram, const SmoothnessConstants& c, double lambda, double rho1_value);

/// (1 + K_{n+1,n+1} beta2 / (lambda (n+1))) rho1
double rho1_tilde(const GramMatrix& gram, const SmoothnessConstants& c, double lambda, double rho1_value);

/// (xi/2) sqrt(K_{n+1,n+1}) ((1/(n+1)) sum_i K_ii^{3/2}) rho1_tilde^2
///   + 2 lambda K_{n+1,n+1} beta2 rho1_tilde
double rho2(const GramMatrix& gram, const SmoothnessConstants& c, double lambda, double rho1_value);

/// sqrt(K_ii) sqrt(K_{n+1,n+1}) min(gamma rho2 / (lambda^3 (n+1)^2),
///                                  2 gamma rho1 / (lambda (n+1)))
Eigen::VectorXd tau2(const GramMatrix& gram, const SmoothnessConstants& c, double lambda, double rho1_value);

/// Approximate scores, per-index bounds and the resulting p-values at one y.
struct ApproxPoint {
  double upper_p = 0.0;
  double lower_p = 0.0;
  double tau_test = 0.0;  ///< tau_{n+1}(y)
  double tau_max = 0.0;   ///< max_i tau_i(y)
  double rho1 = 0.0;
  double rho2 = 0.0;
};

/// Shared artifacts for one (setup, method): the base fit at z and, for the
/// influence-function method, the direction H^+ K_{.,n+1}. Immutable after
/// construction and safe to query from several threads.
class ApproxContext {
 public:
  ApproxContext(const ConformalSetup& setup, ApproxMethod method);
  /// Reuses an already built augmented Gram matrix.
  ApproxContext(const ConformalSetup& setup, ApproxMethod method, std::shared_ptr<const GramMatrix> gram);

  const ApproxMethod& method() const { return method_; }
  const GramMatrix& gram() const { return *gram_; }
  std::shared_ptr<const GramMatrix> gram_ptr() const { return gram_; }
  const Predictor& base() const { return base_; }
  const SmoothnessConstants& constants() const { return constants_; }
  double lambda() const { return lambda_; }
  Index n() const { return base_.problem.n(); }
  /// f_z(X_{n+1})
  double f_query() const { return f_base_(n()); }

  /// I(z') = -(1/(n+1)) d/du l(z', f_query) H^+ K_{.,n+1}
  Eigen::VectorXd influence_vector(double z_prime) const;
  /// Base coefficients - I(z) + I(y).
  Eigen::VectorXd if_coeffs(double y) const;
  /// Coefficients of the approximating predictor at y for this method.
  Eigen::VectorXd approx_coeffs(double y) const;
  /// Fitted values of the approximating predictor over the augmented sample.
  Eigen::VectorXd approx_fitted(double y) const;
  /// tau_i(y) for this method.
  Eigen::VectorXd tau(double y) const;

  ApproxPoint evaluate(double y) const;

 private:
  void init(const ConformalSetup& setup);
  double if_scale(double y) const;

  ApproxMethod method_;
  std::shared_ptr<const GramMatrix> gram_;
  double lambda_ = 1.0;
  LossSpec loss_;
  SmoothnessConstants constants_{};
  Predictor base_;
  Eigen::VectorXd f_base_;
  Eigen::VectorXd direction_;     // H^+ K_{.,n+1}
  Eigen::VectorXd k_direction_;   // K H^+ K_{.,n+1}
  Eigen::VectorXd base_scores_;   // |Y_i - f_z(X_i)|
  Eigen::VectorXd sqrt_diag_;
};

/// Upper and lower approximate p-values over the grid, evaluated in parallel
/// after the base fit. Extras: tau_test, tau_max, rho1, rho2.
PValueCurve approx_pvalue_curves(const ApproxContext& ctx, const YGrid& grid);
PValueCurve approx_pvalue_curves(const ConformalSetup& setup, const YGrid& grid, ApproxMethod method);
/// Serial reference.
PValueCurve approx_pvalue_curves_serial(const ApproxContext& ctx, const YGrid& grid);

/// step * #{cells in upper and not in lower}
double thickness_gap(const PredictionRegion& upper, const PredictionRegion& lower);

struct ThicknessBound {
  double value = 0.0;
  /// Influence-function method only: false when lambda (n+1) <= kappa^2 beta1
  /// and the crude branch was used.
  bool refined = true;
};

/// Theoretical bound on the thickness of the approximate region.
///   k = 0, 1: 8 gamma rho kappa^2 / (lambda (n+1))
///   k = 2:    12 / (1 - beta) * T2 with beta = beta1 kappa^2 / (lambda (n+1)),
///             T2 = sup over grid and i of tau2 (`tau2_sup`); crude branch
///             8 (gamma rho kappa^2 / (lambda (n+1)) + T2) when beta >= 1.
ThicknessBound thickness_bound(ApproxKind kind, const GramMatrix& gram, const SmoothnessConstants& c, double lambda,
                               double tau2_sup);

}  // namespace afcp
