#ifndef MISCAL_SPECIAL_HPP
#define MISCAL_SPECIAL_HPP

namespace miscal {

// d/dx log Gamma(x); x > 0.
double digamma(double x);

// Inverse standard normal CDF; p in (0, 1).
double normal_quantile(double p);

}  // namespace miscal

#endif
