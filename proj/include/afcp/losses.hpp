#pragma once

#include <string>

namespace afcp {

enum class LossFamily { logcosh, pseudo_huber, smoothed_pinball, squared };

std::string to_string(LossFamily family);
LossFamily loss_family_from_string(const std::string& name);

/// Loss l(y, u) between an observed output y and a prediction u.
///   logcosh:          a log cosh((y-u)/a)
///   pseudo_huber:     a^2 (sqrt(1 + ((y-u)/a)^2) - 1)
///   smoothed_pinball: t (y-u) + a log(1 + exp(-(y-u)/a))
///   squared:          (y-u)^2, only used to validate the solver
struct LossSpec {
  LossFamily family = LossFamily::logcosh;
  double a = 1.0;
  double t = 0.5;

  void validate() const;

  static LossSpec logcosh(double a = 1.0) { return {LossFamily::logcosh, a, 0.5}; }
  static LossSpec pseudo_huber(double a = 1.0) { return {LossFamily::pseudo_huber, a, 0.5}; }
  static LossSpec smoothed_pinball(double a, double t) { return {LossFamily::smoothed_pinball, a, t}; }
  static LossSpec squared() { return {LossFamily::squared, 1.0, 0.5}; }
};

double loss_value(const LossSpec& spec, double y, double u);

/// order-th derivative of u -> l(y, u), order in {1, 2, 3}.
double loss_d(const LossSpec& spec, int order, double y, double u);

/// Lipschitz and boundedness constants consumed by the stability bounds.
struct SmoothnessConstants {
  double rho;          ///< sup |d/du l|
  double beta2;        ///< Lipschitz constant of d/du l in u
  double beta1;        ///< Lipschitz constant of d/du l in y
  double xi;           ///< sup |d^3/du^3 l|
  double gamma_score;  ///< Lipschitz constant of the score in u
};

/// Throws InputError for the squared loss, whose first derivative is unbounded.
SmoothnessConstants smoothness_constants(const LossSpec& spec);

/// Non-conformity function s(y, u) = |y - u|.
inline double score(double y, double u) { return y > u ? y - u : u - y; }

}  // namespace afcp
