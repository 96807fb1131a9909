#pragma once

#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "prosody_rl/error.hpp"

namespace prosody_rl::special {

/// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
  if (x <= 0.0) return 0.0;
  return boost::math::gamma_p(a, x);
}

/// Regularized upper incomplete gamma Q(a, x).
inline double gamma_q(double a, double x) {
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(a, x);
}

/// Regularized incomplete beta I_x(a, b).
inline double beta_i(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return boost::math::ibeta(a, b, x);
}

/// Two-sided Student-t tail probability P(|T| >= |t|) with df degrees of freedom.
inline double student_t_two_sided(double t, double df) {
  if (std::isinf(t)) return 0.0;
  if (std::isnan(t)) return 1.0;
  return beta_i(0.5 * df, 0.5, df / (df + t * t));
}

/// Upper-tail Student-t probability P(T >= t).
inline double student_t_upper(double t, double df) {
  const double two = student_t_two_sided(t, df);
  return t >= 0.0 ? 0.5 * two : 1.0 - 0.5 * two;
}

/// Upper-tail chi-square probability with k degrees of freedom.
inline double chi_square_sf(double stat, double k) { return gamma_q(0.5 * k, 0.5 * stat); }

/// Gamma density with the (shape, scale) parameterization.
inline double gamma_pdf(double x, double shape, double scale) {
  if (x < 0.0) return 0.0;
  if (x == 0.0) return shape < 1.0 ? std::numeric_limits<double>::infinity() : (shape == 1.0 ? 1.0 / scale : 0.0);
  return std::exp((shape - 1.0) * std::log(x) - x / scale - std::lgamma(shape) - shape * std::log(scale));
}

/// Adaptive Gauss-Kronrod (15-point) integral of f over [a, b]; b may be
/// +infinity. Throws if the error estimate exceeds abs_tol.
template <class F>
double integrate(F&& f, double a, double b, double abs_tol = 1e-10) {
  double err = 0.0;
  const double value =
      boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, b, 10, 1e-14, &err);
  if (!(err <= abs_tol)) fail(Errc::InvalidParams, "quadrature did not reach requested accuracy");
  return value;
}

}  // namespace prosody_rl::special
