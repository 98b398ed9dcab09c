#include "miscal/special.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <stdexcept>

namespace miscal {

double digamma(double x) {
  if (std::isnan(x)) return x;
  if (!(x > 0.0)) throw std::domain_error("digamma: x must be > 0");
  // Gradient evaluations reach the closure of the positive axis, so the
  // boundary returns an infinity rather than throwing.
  if (std::isinf(x)) return x;
  if (x < 1e-300) return -1.0 / x;
  return boost::math::digamma(x);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::domain_error("normal_quantile: p must be in (0, 1)");
  static const boost::math::normal_distribution<double> unit{};
  return boost::math::quantile(unit, p);
}

}  // namespace miscal
