#include "afcp/losses.hpp"

#include <cmath>
#include <limits>

#include "afcp/diagnostics.hpp"

namespace afcp {

namespace {

// log(cosh(v)) = |v| + log((1 + e^{-2|v|}) / 2), finite for every v.
double log_cosh(double v) {
  const double av = std::abs(v);
  return av + std::log1p(std::exp(-2.0 * av)) - std::log(2.0);
}

// sech^2(v) = 4 e^{-2|v|} / (1 + e^{-2|v|})^2
double sech2(double v) {
  const double e = std::exp(-2.0 * std::abs(v));
  return 4.0 * e / ((1.0 + e) * (1.0 + e));
}

// log(1 + e^x)
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// 1 / (1 + e^{-x})
double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string to_string(LossFamily family) {
  switch (family) {
    case LossFamily::logcosh:
      return "logcosh";
    case LossFamily::pseudo_huber:
      return "pseudo_huber";
    case LossFamily::smoothed_pinball:
      return "smoothed_pinball";
    case LossFamily::squared:
      return "squared";
  }
  return "unknown";
}

LossFamily loss_family_from_string(const std::string& name) {
  if (name == "logcosh") return LossFamily::logcosh;
  if (name == "pseudo_huber") return LossFamily::pseudo_huber;
  if (name == "smoothed_pinball") return LossFamily::smoothed_pinball;
  if (name == "squared") return LossFamily::squared;
  throw InputError("unknown loss family '" + name + "'");
}

void LossSpec::validate() const {
  if (!(a > 0.0) || !std::isfinite(a)) throw InputError("loss: scale a must be positive and finite");
  if (family == LossFamily::smoothed_pinball && !(t > 0.0 && t < 1.0))
    throw InputError("loss: quantile level t must lie in (0, 1)");
}

double loss_value(const LossSpec& spec, double y, double u) {
  const double r = y - u;
  const double a = spec.a;
  switch (spec.family) {
    case LossFamily::logcosh:
      return a * log_cosh(r / a);
    case LossFamily::pseudo_huber: {
      const double v = r / a;
      // a^2 (sqrt(1+v^2) - 1) without cancellation near v = 0
      return a * a * v * v / (std::sqrt(1.0 + v * v) + 1.0);
    }
    case LossFamily::smoothed_pinball:
      return spec.t * r + a * softplus(-r / a);
    case LossFamily::squared:
      return r * r;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

double loss_d(const LossSpec& spec, int order, double y, double u) {
  if (order < 1 || order > 3) throw InputError("loss_d: order must be 1, 2 or 3");
  const double r = y - u;
  const double a = spec.a;
  const double v = r / a;
  switch (spec.family) {
    case LossFamily::logcosh:
      if (order == 1) return -std::tanh(v);
      if (order == 2) return sech2(v) / a;
      return 2.0 * sech2(v) * std::tanh(v) / (a * a);
    case LossFamily::pseudo_huber: {
      const double s = 1.0 + v * v;
      if (order == 1) return -a * v / std::sqrt(s);
      if (order == 2) return 1.0 / (s * std::sqrt(s));
      return 3.0 * v / (a * s * s * std::sqrt(s));
    }
    case LossFamily::smoothed_pinball: {
      const double p = logistic(-v);
      if (order == 1) return p - spec.t;
      const double q = p * (1.0 - p);
      if (order == 2) return q / a;
      return (1.0 - 2.0 * p) * q / (a * a);
    }
    case LossFamily::squared:
      if (order == 1) return -2.0 * r;
      if (order == 2) return 2.0;
      return 0.0;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

SmoothnessConstants smoothness_constants(const LossSpec& spec) {
  spec.validate();
  const double a = spec.a;
  switch (spec.family) {
    case LossFamily::logcosh:
      // relaxed xi = 1/a^2 (the tight value is 4/(3 sqrt 3 a^2))
      return {1.0, 1.0 / a, 1.0 / a, 1.0 / (a * a), 1.0};
    case LossFamily::pseudo_huber:
      return {a, 1.0, 1.0, 1.5 * std::pow(0.8, 2.5) / a, 1.0};
    case LossFamily::smoothed_pinball: {
      const double s3 = std::sqrt(3.0);
      const double xi = (5.0 + 3.0 * s3) / std::pow(s3 + 3.0, 3) / (a * a);
      return {std::max(spec.t, 1.0 - spec.t), 0.25 / a, 0.25 / a, xi, 1.0};
    }
    case LossFamily::squared:
      throw InputError("squared loss has no finite Lipschitz constant");
  }
  throw InputError("unknown loss family");
}

}  // namespace afcp
